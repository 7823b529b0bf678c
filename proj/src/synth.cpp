#include "cto/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "cto/error.hpp"
#include "cto/rng.hpp"

namespace fs = std::filesystem;

namespace cto {

namespace {

constexpr double kTau = 6.283185307179586477;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

} // namespace

std::string SynthSpec::to_text() const {
    std::ostringstream os;
    os << "n_images=" << n_images << "\n";
    os << "height=" << height << "\n";
    os << "width=" << width << "\n";
    os << "shapes_min=" << shapes_min << "\n";
    os << "shapes_max=" << shapes_max << "\n";
    os << "allow_ellipse=" << (allow_ellipse ? 1 : 0) << "\n";
    os << "allow_blob=" << (allow_blob ? 1 : 0) << "\n";
    os << "radius_lo=" << fmt(radius_lo) << "\n";
    os << "radius_hi=" << fmt(radius_hi) << "\n";
    os << "center_jitter=" << fmt(center_jitter) << "\n";
    os << "bg_lo=" << fmt(bg_lo) << "\n";
    os << "bg_hi=" << fmt(bg_hi) << "\n";
    os << "fg_lo=" << fmt(fg_lo) << "\n";
    os << "fg_hi=" << fmt(fg_hi) << "\n";
    os << "noise_sigma=" << fmt(noise_sigma) << "\n";
    os << "texture_amplitude=" << fmt(texture_amplitude) << "\n";
    os << "seed=" << seed << "\n";
    return os.str();
}

SynthSpec SynthSpec::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("synth spec: missing '=' in line: " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    SynthSpec s;
    auto geti = [&](const char* k, int d) { return kv.count(k) ? std::stoi(kv[k]) : d; };
    auto getd = [&](const char* k, double d) { return kv.count(k) ? std::stod(kv[k]) : d; };
    s.n_images = geti("n_images", s.n_images);
    s.height = geti("height", s.height);
    s.width = geti("width", s.width);
    s.shapes_min = geti("shapes_min", s.shapes_min);
    s.shapes_max = geti("shapes_max", s.shapes_max);
    s.allow_ellipse = geti("allow_ellipse", 1) != 0;
    s.allow_blob = geti("allow_blob", 1) != 0;
    s.radius_lo = getd("radius_lo", s.radius_lo);
    s.radius_hi = getd("radius_hi", s.radius_hi);
    s.center_jitter = getd("center_jitter", s.center_jitter);
    s.bg_lo = getd("bg_lo", s.bg_lo);
    s.bg_hi = getd("bg_hi", s.bg_hi);
    s.fg_lo = getd("fg_lo", s.fg_lo);
    s.fg_hi = getd("fg_hi", s.fg_hi);
    s.noise_sigma = getd("noise_sigma", s.noise_sigma);
    s.texture_amplitude = getd("texture_amplitude", s.texture_amplitude);
    s.seed = static_cast<std::uint64_t>(std::stoull(kv.count("seed") ? kv["seed"] : "42"));
    return s;
}

std::uint64_t SynthSpec::hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : to_text()) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
    return h;
}

std::vector<double> render_shape_coverage(int h, int w, const ShapeParams& shape) {
    std::vector<double> cov(static_cast<size_t>(h) * w, 0.0);
    const int ss = 4; // subpixel grid
    const double ct = std::cos(shape.theta), st = std::sin(shape.theta);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            int inside = 0;
            for (int i = 0; i < ss; ++i)
                for (int j = 0; j < ss; ++j) {
                    const double y = r + (i + 0.5) / ss - shape.cy;
                    const double x = c + (j + 0.5) / ss - shape.cx;
                    const double u = (ct * x + st * y) / shape.a;
                    const double v = (-st * x + ct * y) / shape.b;
                    const double rho = std::sqrt(u * u + v * v);
                    double limit = 1.0;
                    if (shape.is_blob && shape.lobes > 0)
                        limit += shape.perturb_amp *
                                 std::sin(shape.lobes * std::atan2(v, u) + shape.phase);
                    if (rho <= limit) ++inside;
                }
            cov[static_cast<size_t>(r) * w + c] = static_cast<double>(inside) / (ss * ss);
        }
    return cov;
}

namespace {

std::string zero_pad(int v, int digits) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < digits) s.insert(s.begin(), '0');
    return s;
}

} // namespace

GeneratedCorpus synth_generate(const SynthSpec& spec, const std::string& out_dir) {
    if (spec.n_images < 1) throw DataError("synth: n_images must be >= 1");
    if (spec.height % 32 != 0 || spec.width % 32 != 0)
        throw DataError("synth: height and width must be divisible by 32");
    if (spec.shapes_min < 1 || spec.shapes_max < spec.shapes_min)
        throw DataError("synth: invalid shapes_per_image range");
    if (!spec.allow_ellipse && !spec.allow_blob)
        throw DataError("synth: at least one shape kind must be allowed");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir))
        throw DataError("synth: cannot create output directory '" + out_dir + "'");
    {
        std::ofstream probe(fs::path(out_dir) / ".write_probe", std::ios::trunc);
        if (!probe) throw DataError("synth: output directory '" + out_dir + "' is not writable");
    }
    fs::remove(fs::path(out_dir) / ".write_probe", ec);

    GeneratedCorpus corpus;
    corpus.dir = out_dir;
    const int H = spec.height, W = spec.width;
    const double extent = std::min(H, W);

    for (int idx = 0; idx < spec.n_images; ++idx) {
        CounterRng rng(spec.seed ^ static_cast<std::uint64_t>(idx), 0x73796e7468ull);
        SampleInfo info;
        info.id = "sample_" + zero_pad(idx, 4);
        info.image_path = "img_" + zero_pad(idx, 4) + ".ppm";
        info.mask_path = "msk_" + zero_pad(idx, 4) + ".pgm";

        const int nshapes =
            spec.shapes_min +
            static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.shapes_max - spec.shapes_min + 1)));
        for (int s = 0; s < nshapes; ++s) {
            ShapeParams sp;
            const bool can_both = spec.allow_ellipse && spec.allow_blob;
            sp.is_blob = can_both ? rng.uniform() < 0.5 : spec.allow_blob;
            sp.cx = W / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * W;
            sp.cy = H / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * H;
            sp.a = rng.uniform(spec.radius_lo, spec.radius_hi) * extent;
            sp.b = rng.uniform(spec.radius_lo, spec.radius_hi) * extent;
            sp.theta = rng.uniform(0.0, kTau);
            if (sp.is_blob) {
                sp.perturb_amp = rng.uniform(0.06, 0.18);
                sp.lobes = 3 + static_cast<int>(rng.uniform_int(4));
                sp.phase = rng.uniform(0.0, kTau);
            }
            info.shapes.push_back(sp);
        }

        // union coverage over shapes
        std::vector<double> cov(static_cast<size_t>(H) * W, 0.0);
        for (const auto& sp : info.shapes) {
            auto c = render_shape_coverage(H, W, sp);
            for (size_t i = 0; i < cov.size(); ++i) cov[i] = std::max(cov[i], c[i]);
        }

        // intensity fields
        const double bg = rng.uniform(spec.bg_lo, spec.bg_hi);
        const double fg = rng.uniform(spec.fg_lo, spec.fg_hi);
        double tint[3];
        for (double& t : tint) t = rng.uniform(-0.04, 0.04);
        const double tfx = rng.uniform(1.0, 3.0), tfy = rng.uniform(1.0, 3.0);
        const double tph = rng.uniform(0.0, kTau);

        ImageU8 img;
        img.w = W;
        img.h = H;
        img.channels = 3;
        img.v.resize(static_cast<size_t>(H) * W * 3);
        ImageU8 msk;
        msk.w = W;
        msk.h = H;
        msk.channels = 1;
        msk.v.resize(static_cast<size_t>(H) * W);

        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const size_t i = static_cast<size_t>(r) * W + c;
                const double texture =
                    spec.texture_amplitude *
                    std::sin(kTau * (tfx * c / W + tfy * r / H) + tph);
                const double base = bg + texture + cov[i] * (fg - bg);
                for (int ch = 0; ch < 3; ++ch) {
                    const double noisy =
                        base + tint[ch] + rng.normal(0.0, spec.noise_sigma);
                    const double clamped = std::min(1.0, std::max(0.0, noisy));
                    img.v[i * 3 + static_cast<size_t>(ch)] =
                        static_cast<std::uint8_t>(std::lround(clamped * 255.0));
                }
                msk.v[i] = cov[i] > 0.5 ? 1 : 0;
            }

        write_ppm((fs::path(out_dir) / info.image_path).string(), img);
        write_pgm((fs::path(out_dir) / info.mask_path).string(), msk);
        corpus.samples.push_back(std::move(info));
    }

    {
        std::ofstream spec_out(fs::path(out_dir) / "spec.txt", std::ios::trunc);
        spec_out << spec.to_text();
    }
    {
        std::ofstream man(fs::path(out_dir) / "manifest.tsv", std::ios::trunc);
        man << "# seed=" << spec.seed << "\n";
        man << "# spec_hash=" << spec.hash() << "\n";
        for (const auto& s : corpus.samples)
            man << s.id << "\t" << s.image_path << "\t" << s.mask_path << "\n";
    }
    return corpus;
}

} // namespace cto
