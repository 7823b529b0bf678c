#pragma once

// On-disk corpus loading (manifest + PPM/PGM pairs), k-fold splitting and
// the seeded flip/rotate augmentations.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cto/image_io.hpp"
#include "cto/mask_ops.hpp"
#include "cto/rng.hpp"

namespace cto {

struct Sample {
    std::string id;
    ImageU8 image;  // RGB
    LabelMask mask; // integer labels

    // boundary map derived from the mask, computed on first use
    const LabelMask& boundary() const;

  private:
    mutable std::optional<LabelMask> boundary_;
};

struct Dataset {
    std::string dir;
    std::vector<Sample> samples;

    size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    // Highest label value present; training validates it against num_classes.
    int max_label() const;
};

// Reads manifest.tsv (`id<TAB>image<TAB>mask`, '#' comment lines allowed)
// and loads every referenced pair. An empty manifest yields an empty
// dataset. Malformed files and image/mask size mismatches throw DataError.
Dataset load_pairs(const std::string& dir);

// Disjoint folds covering 0..n-1, sizes differing by at most one, from a
// seeded shuffle.
std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed);

// Train/val indices for one fold: fold `fold_index` is validation, the rest
// training. k <= 1 puts everything in the training split.
struct FoldSplit {
    std::vector<int> train, val;
};
FoldSplit fold_split(int n, int k, int fold_index, std::uint64_t seed);

// Seeded horizontal/vertical flips and 90-degree rotations, applied jointly
// to image and mask. Rotations are applied only to square samples.
Sample augment_sample(const Sample& s, CounterRng& rng);

} // namespace cto
