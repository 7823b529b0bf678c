#pragma once

// Run configuration: a flat `section.key = value` text format (one line per
// key, '#' comments). Parsing is strict -- unknown keys, bad values and
// duplicate keys are errors with line numbers -- and every accepted file
// round-trips through serialize() to an equivalent config.

#include <cstdint>
#include <string>

#include "cto/cto_model.hpp"
#include "cto/synth.hpp"

namespace cto {

struct OptimizerConfig {
    std::string kind = "adam";
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999;
    double eps = 1e-8;
};

struct RunConfig {
    ModelConfig model;       // model.* and vit.* keys; flags from model.variant
    std::string variant = "dual+bem+bim";
    OptimizerConfig optimizer;
    int batch_size = 32;
    int epochs = 30;
    bool augment = true;
    std::string data_dir = "data";
    int fold_k = 5;
    int fold_index = 0;
    std::string eval_split = "val"; // train | val | folds
    std::string init_checkpoint;    // optional warm start for training
    std::string checkpoint_path = "cto.ckpt";
    std::string metrics_path = "metrics";
    SynthSpec synth;

    void validate() const;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string serialize_config(const RunConfig& cfg);

// FNV-1a over the canonical serialization; used to tie ablation rows to the
// exact configuration they ran with.
std::uint64_t config_hash(const RunConfig& cfg);

// Resolves the variant name to ablation flags (throws ConfigError on an
// unknown name).
AblationFlags variant_flags(const std::string& name);

} // namespace cto
