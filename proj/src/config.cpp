#include "cto/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "cto/error.hpp"

namespace cto {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::vector<int> parse_int_list(const std::string& v, int lineno) {
    std::vector<int> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        try {
            out.push_back(std::stoi(item));
        } catch (...) {
            throw ConfigError("line " + std::to_string(lineno) + ": bad integer '" + item + "'");
        }
    }
    if (out.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty integer list");
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct KeyedValues {
    std::map<std::string, std::pair<std::string, int>> kv; // key -> (value, line)

    bool has(const std::string& k) const { return kv.count(k) != 0; }
    std::string take(const std::string& k) {
        auto it = kv.find(k);
        const std::string v = it->second.first;
        kv.erase(it);
        return v;
    }
    int line(const std::string& k) const { return kv.at(k).second; }
};

} // namespace

AblationFlags variant_flags(const std::string& name) {
    for (const auto& v : ablation_variants())
        if (v.name == name) return v.flags;
    std::string known;
    for (const auto& v : ablation_variants()) known += (known.empty() ? "" : ", ") + v.name;
    throw ConfigError("unknown variant '" + name + "' (known: " + known + ")");
}

void RunConfig::validate() const {
    if (optimizer.kind != "adam")
        throw ConfigError("optimizer.kind must be 'adam', got '" + optimizer.kind + "'");
    if (optimizer.lr <= 0) throw ConfigError("optimizer.lr must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (fold_k < 1) throw ConfigError("data.fold_k must be >= 1");
    if (fold_k > 1 && (fold_index < 0 || fold_index >= fold_k))
        throw ConfigError("data.fold_index must lie in [0, fold_k)");
    if (eval_split != "train" && eval_split != "val" && eval_split != "folds")
        throw ConfigError("eval.split must be 'train', 'val' or 'folds'");
    auto violations = model.violations();
    if (!violations.empty()) {
        std::string msg = "invalid model config:";
        for (const auto& s : violations) msg += " " + s + ";";
        throw ConfigError(msg);
    }
}

RunConfig parse_config_text(const std::string& text) {
    KeyedValues vals;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        if (vals.kv.count(key))
            throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        vals.kv[key] = {value, lineno};
    }

    RunConfig cfg;
    auto geti = [&](const char* k, int& dst) {
        if (!vals.has(k)) return;
        const int ln = vals.line(k);
        try {
            dst = std::stoi(vals.take(k));
        } catch (...) {
            throw ConfigError("line " + std::to_string(ln) + ": bad integer for " + k);
        }
    };
    auto getu = [&](const char* k, std::uint64_t& dst) {
        if (!vals.has(k)) return;
        const int ln = vals.line(k);
        try {
            dst = std::stoull(vals.take(k));
        } catch (...) {
            throw ConfigError("line " + std::to_string(ln) + ": bad integer for " + k);
        }
    };
    auto getd = [&](const char* k, double& dst) {
        if (!vals.has(k)) return;
        const int ln = vals.line(k);
        try {
            dst = std::stod(vals.take(k));
        } catch (...) {
            throw ConfigError("line " + std::to_string(ln) + ": bad number for " + k);
        }
    };
    auto gets = [&](const char* k, std::string& dst) {
        if (vals.has(k)) dst = vals.take(k);
    };
    auto getb = [&](const char* k, bool& dst) {
        int v = dst ? 1 : 0;
        geti(k, v);
        dst = v != 0;
    };
    auto getlist = [&](const char* k, std::vector<int>& dst) {
        if (!vals.has(k)) return;
        const int ln = vals.line(k);
        dst = parse_int_list(vals.take(k), ln);
    };

    getlist("model.stage_channels", cfg.model.stage_channels);
    getlist("model.decoder_channels", cfg.model.decoder_channels);
    geti("model.boundary_width", cfg.model.boundary_width);
    geti("model.num_classes", cfg.model.num_classes);
    getd("model.alpha", cfg.model.alpha);
    geti("model.levels", cfg.model.levels);
    geti("model.input_h", cfg.model.input_h);
    geti("model.input_w", cfg.model.input_w);
    getu("model.seed", cfg.model.seed);
    gets("model.variant", cfg.variant);
    cfg.model.flags = variant_flags(cfg.variant);

    getlist("vit.rates", cfg.model.vit.rates);
    geti("vit.heads", cfg.model.vit.heads_per_rate);
    geti("vit.group_dim", cfg.model.vit.group_dim);

    gets("optimizer.kind", cfg.optimizer.kind);
    getd("optimizer.lr", cfg.optimizer.lr);
    getd("optimizer.beta1", cfg.optimizer.beta1);
    getd("optimizer.beta2", cfg.optimizer.beta2);
    getd("optimizer.eps", cfg.optimizer.eps);

    geti("train.batch_size", cfg.batch_size);
    geti("train.epochs", cfg.epochs);
    getb("train.augment", cfg.augment);

    gets("train.init_checkpoint", cfg.init_checkpoint);
    gets("data.dir", cfg.data_dir);
    geti("data.fold_k", cfg.fold_k);
    geti("data.fold_index", cfg.fold_index);
    gets("eval.split", cfg.eval_split);
    gets("out.checkpoint", cfg.checkpoint_path);
    gets("out.metrics", cfg.metrics_path);

    geti("synth.n_images", cfg.synth.n_images);
    geti("synth.height", cfg.synth.height);
    geti("synth.width", cfg.synth.width);
    geti("synth.shapes_min", cfg.synth.shapes_min);
    geti("synth.shapes_max", cfg.synth.shapes_max);
    getb("synth.allow_ellipse", cfg.synth.allow_ellipse);
    getb("synth.allow_blob", cfg.synth.allow_blob);
    getd("synth.radius_lo", cfg.synth.radius_lo);
    getd("synth.radius_hi", cfg.synth.radius_hi);
    getd("synth.center_jitter", cfg.synth.center_jitter);
    getd("synth.bg_lo", cfg.synth.bg_lo);
    getd("synth.bg_hi", cfg.synth.bg_hi);
    getd("synth.fg_lo", cfg.synth.fg_lo);
    getd("synth.fg_hi", cfg.synth.fg_hi);
    getd("synth.noise_sigma", cfg.synth.noise_sigma);
    getd("synth.texture_amplitude", cfg.synth.texture_amplitude);
    getu("synth.seed", cfg.synth.seed);

    if (!vals.kv.empty()) {
        const auto& [key, vl] = *vals.kv.begin();
        throw ConfigError("line " + std::to_string(vl.second) + ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string serialize_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "model.stage_channels = " << join_ints(cfg.model.stage_channels) << "\n";
    os << "model.decoder_channels = " << join_ints(cfg.model.decoder_channels) << "\n";
    os << "model.boundary_width = " << cfg.model.boundary_width << "\n";
    os << "model.num_classes = " << cfg.model.num_classes << "\n";
    os << "model.alpha = " << fmt_double(cfg.model.alpha) << "\n";
    os << "model.levels = " << cfg.model.levels << "\n";
    os << "model.input_h = " << cfg.model.input_h << "\n";
    os << "model.input_w = " << cfg.model.input_w << "\n";
    os << "model.seed = " << cfg.model.seed << "\n";
    os << "model.variant = " << cfg.variant << "\n";
    os << "vit.rates = " << join_ints(cfg.model.vit.rates) << "\n";
    os << "vit.heads = " << cfg.model.vit.heads_per_rate << "\n";
    os << "vit.group_dim = " << cfg.model.vit.group_dim << "\n";
    os << "optimizer.kind = " << cfg.optimizer.kind << "\n";
    os << "optimizer.lr = " << fmt_double(cfg.optimizer.lr) << "\n";
    os << "optimizer.beta1 = " << fmt_double(cfg.optimizer.beta1) << "\n";
    os << "optimizer.beta2 = " << fmt_double(cfg.optimizer.beta2) << "\n";
    os << "optimizer.eps = " << fmt_double(cfg.optimizer.eps) << "\n";
    os << "train.batch_size = " << cfg.batch_size << "\n";
    os << "train.epochs = " << cfg.epochs << "\n";
    os << "train.augment = " << (cfg.augment ? 1 : 0) << "\n";
    if (!cfg.init_checkpoint.empty())
        os << "train.init_checkpoint = " << cfg.init_checkpoint << "\n";
    os << "data.dir = " << cfg.data_dir << "\n";
    os << "data.fold_k = " << cfg.fold_k << "\n";
    os << "data.fold_index = " << cfg.fold_index << "\n";
    os << "eval.split = " << cfg.eval_split << "\n";
    os << "out.checkpoint = " << cfg.checkpoint_path << "\n";
    os << "out.metrics = " << cfg.metrics_path << "\n";
    os << "synth.n_images = " << cfg.synth.n_images << "\n";
    os << "synth.height = " << cfg.synth.height << "\n";
    os << "synth.width = " << cfg.synth.width << "\n";
    os << "synth.shapes_min = " << cfg.synth.shapes_min << "\n";
    os << "synth.shapes_max = " << cfg.synth.shapes_max << "\n";
    os << "synth.allow_ellipse = " << (cfg.synth.allow_ellipse ? 1 : 0) << "\n";
    os << "synth.allow_blob = " << (cfg.synth.allow_blob ? 1 : 0) << "\n";
    os << "synth.radius_lo = " << fmt_double(cfg.synth.radius_lo) << "\n";
    os << "synth.radius_hi = " << fmt_double(cfg.synth.radius_hi) << "\n";
    os << "synth.center_jitter = " << fmt_double(cfg.synth.center_jitter) << "\n";
    os << "synth.bg_lo = " << fmt_double(cfg.synth.bg_lo) << "\n";
    os << "synth.bg_hi = " << fmt_double(cfg.synth.bg_hi) << "\n";
    os << "synth.fg_lo = " << fmt_double(cfg.synth.fg_lo) << "\n";
    os << "synth.fg_hi = " << fmt_double(cfg.synth.fg_hi) << "\n";
    os << "synth.noise_sigma = " << fmt_double(cfg.synth.noise_sigma) << "\n";
    os << "synth.texture_amplitude = " << fmt_double(cfg.synth.texture_amplitude) << "\n";
    os << "synth.seed = " << cfg.synth.seed << "\n";
    return os.str();
}

std::uint64_t config_hash(const RunConfig& cfg) {
    // output paths are not part of the experiment identity
    std::istringstream in(serialize_config(cfg));
    std::uint64_t h = 1469598103934665603ull;
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("out.", 0) == 0) continue;
        for (char c : line) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
        h = (h ^ static_cast<unsigned char>('\n')) * 1099511628211ull;
    }
    return h;
}

} // namespace cto
