#pragma once

// Seeded synthetic segmentation corpus: lesion-like blobs (ellipses with an
// optional sinusoidal radius perturbation) rendered with anti-aliased edges
// onto textured backgrounds, plus Gaussian pixel noise. Corpus bytes are a
// pure function of (spec, seed): every random draw comes from per-sample
// counter RNG streams derived as seed XOR sample index.

#include <cstdint>
#include <string>
#include <vector>

#include "cto/image_io.hpp"
#include "cto/mask_ops.hpp"

namespace cto {

struct SynthSpec {
    int n_images = 200;
    int height = 64, width = 64;
    int shapes_min = 1, shapes_max = 3;
    bool allow_ellipse = true;
    bool allow_blob = true;     // perturbed-blob shape kind
    double radius_lo = 0.18;    // radii as fractions of min(H, W)
    double radius_hi = 0.32;
    double center_jitter = 0.22; // max center offset from the middle, fraction of extent
    double bg_lo = 0.15, bg_hi = 0.35;
    double fg_lo = 0.6, fg_hi = 0.9;
    double noise_sigma = 0.03;
    double texture_amplitude = 0.06;
    std::uint64_t seed = 42;

    // key=value serialization (also the input to the spec hash)
    std::string to_text() const;
    static SynthSpec from_text(const std::string& text);
    std::uint64_t hash() const; // FNV-1a over to_text()
};

struct ShapeParams {
    bool is_blob = false;
    double cx = 0, cy = 0;  // center, pixels
    double a = 0, b = 0;    // semi-axes, pixels
    double theta = 0;       // rotation
    double perturb_amp = 0; // radius modulation amplitude (blobs)
    int lobes = 0;
    double phase = 0;
};

struct SampleInfo {
    std::string id;
    std::string image_path; // relative to the corpus dir
    std::string mask_path;
    std::vector<ShapeParams> shapes;
};

struct GeneratedCorpus {
    std::string dir;
    std::vector<SampleInfo> samples;
};

// Anti-aliased coverage of one shape via 4x4 subpixel sampling: fraction of
// subpixel centers inside rho <= 1 + amp*sin(lobes*phi + phase) in the
// ellipse-normalized frame. Exposed so tests can compare the rasterized area
// against the closed-form pi*a*b.
std::vector<double> render_shape_coverage(int h, int w, const ShapeParams& shape);

// Writes img_NNNN.ppm / msk_NNNN.pgm pairs, manifest.tsv and spec.txt under
// out_dir (created if absent).
GeneratedCorpus synth_generate(const SynthSpec& spec, const std::string& out_dir);

} // namespace cto
