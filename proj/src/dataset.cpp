#include "cto/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cto/error.hpp"

namespace fs = std::filesystem;

namespace cto {

const LabelMask& Sample::boundary() const {
    if (!boundary_) boundary_ = boundary_gt(mask);
    return *boundary_;
}

int Dataset::max_label() const {
    int m = 0;
    for (const auto& s : samples)
        for (auto v : s.mask.v) m = std::max(m, static_cast<int>(v));
    return m;
}

Dataset load_pairs(const std::string& dir) {
    const fs::path manifest = fs::path(dir) / "manifest.tsv";
    std::ifstream in(manifest);
    if (!in) throw DataError("load_pairs: missing manifest at '" + manifest.string() + "'");

    Dataset ds;
    ds.dir = dir;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string id, img_rel, msk_rel;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, img_rel, '\t') ||
            !std::getline(ls, msk_rel, '\t'))
            throw DataError("load_pairs: manifest line " + std::to_string(lineno) +
                            " is not id<TAB>image<TAB>mask");
        Sample s;
        s.id = id;
        s.image = read_pnm((fs::path(dir) / img_rel).string());
        if (s.image.channels != 3)
            throw DataError("load_pairs: image for '" + id + "' is not a 3-channel PPM");
        ImageU8 m = read_pnm((fs::path(dir) / msk_rel).string());
        if (m.channels != 1)
            throw DataError("load_pairs: mask for '" + id + "' is not a 1-channel PGM");
        if (m.w != s.image.w || m.h != s.image.h)
            throw DataError("load_pairs: image/mask size mismatch for sample '" + id + "'");
        s.mask.h = m.h;
        s.mask.w = m.w;
        s.mask.v = m.v;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

std::vector<std::vector<int>> kfold_split(int n, int k, std::uint64_t seed) {
    if (k < 1) throw DataError("kfold_split: k must be >= 1");
    if (k > n) throw DataError("kfold_split: k=" + std::to_string(k) + " exceeds n=" +
                               std::to_string(n));
    std::vector<int> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    CounterRng rng(seed, 0x666f6c64ull);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    std::vector<std::vector<int>> folds(static_cast<size_t>(k));
    for (int i = 0; i < n; ++i) folds[static_cast<size_t>(i % k)].push_back(idx[static_cast<size_t>(i)]);
    return folds;
}

FoldSplit fold_split(int n, int k, int fold_index, std::uint64_t seed) {
    FoldSplit out;
    if (k <= 1) {
        out.train.resize(static_cast<size_t>(n));
        std::iota(out.train.begin(), out.train.end(), 0);
        return out;
    }
    if (fold_index < 0 || fold_index >= k)
        throw DataError("fold_split: fold index " + std::to_string(fold_index) + " out of [0," +
                        std::to_string(k) + ")");
    auto folds = kfold_split(n, k, seed);
    for (int f = 0; f < k; ++f)
        for (int i : folds[static_cast<size_t>(f)])
            (f == fold_index ? out.val : out.train).push_back(i);
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    return out;
}

namespace {

template <typename Fn>
void remap_pixels(int h, int w, Fn&& src_of_dst, const ImageU8& img, const LabelMask& mask,
                  ImageU8& img_out, LabelMask& mask_out) {
    img_out.w = w;
    img_out.h = h;
    img_out.channels = img.channels;
    img_out.v.resize(static_cast<size_t>(h) * w * img.channels);
    mask_out = LabelMask(h, w);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            auto [sr, sc] = src_of_dst(r, c);
            for (int ch = 0; ch < img.channels; ++ch)
                img_out.at(r, c, ch) = img.at(sr, sc, ch);
            mask_out.at(r, c) = mask.at(sr, sc);
        }
}

} // namespace

Sample augment_sample(const Sample& s, CounterRng& rng) {
    const bool flip_h = rng.uniform() < 0.5;
    const bool flip_v = rng.uniform() < 0.5;
    const int quarter_turns =
        s.image.h == s.image.w ? static_cast<int>(rng.uniform_int(4)) : 0;

    Sample out;
    out.id = s.id;
    const int h = s.image.h, w = s.image.w;
    remap_pixels(
        h, w,
        [&](int r, int c) {
            int sr = r, sc = c;
            for (int t = 0; t < quarter_turns; ++t) {
                // inverse of a 90-degree clockwise rotation
                const int nr = w - 1 - sc, nc = sr;
                sr = nr;
                sc = nc;
            }
            if (flip_h) sc = w - 1 - sc;
            if (flip_v) sr = h - 1 - sr;
            return std::pair<int, int>{sr, sc};
        },
        s.image, s.mask, out.image, out.mask);
    return out;
}

} // namespace cto
