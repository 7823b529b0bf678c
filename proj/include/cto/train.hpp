#pragma once

// Training, evaluation, prediction and verification drivers shared by the
// CLI and the acceptance suite. Training runs in f32; the gradient check
// builds its own f64 model.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cto/config.hpp"
#include "cto/cto_model.hpp"
#include "cto/dataset.hpp"
#include "cto/gradcheck.hpp"
#include "cto/metrics.hpp"
#include "cto/stitch_vit.hpp"

namespace cto {

struct EpochLog {
    int epoch = 0;
    double total_loss = 0;
    std::vector<double> ce;   // per decoder level, epoch mean
    std::vector<double> miou; // per decoder level, epoch mean
    double boundary_dice = 0; // epoch mean, pre-weighting
    double val_dice = -1, val_iou = -1; // -1 when there is no validation split
};

struct TrainSummary {
    std::vector<EpochLog> epochs;
    double best_val_dice = -1;
    int best_epoch = -1;
    std::string checkpoint_path;
    std::string metrics_path; // the .train.jsonl epoch log
};

struct EvalStats {
    int n_images = 0;
    double dice_mean = 0, dice_std = 0;
    double iou_mean = 0, iou_std = 0;
    double hd_mean = 0; // over images with a defined distance
    int hd_defined = 0; // count of such images
    std::map<int, double> per_class_dice;
};

// Tensor conversion helpers (f32 training path).
TensorF image_to_tensor(const ImageU8& img);
TensorF masks_to_target(const std::vector<const LabelMask*>& masks, int num_classes);
TensorF boundary_target(const std::vector<const LabelMask*>& masks);
LabelMask prediction_to_mask(const TensorF& logits, int num_classes, int image_index = 0);

// Epoch log lines (one JSON object per line) land at
// `<metrics>.train.jsonl`; the best-validation checkpoint at the configured
// path. Loss turning non-finite aborts with a NumericError naming the batch.
TrainSummary run_training(const RunConfig& cfg);

// Evaluates a checkpoint over the configured split (batch size one, eval
// mode). With use_checkpoint=false evaluates the freshly built model.
EvalStats run_eval(const RunConfig& cfg, const std::string& checkpoint_path,
                   bool use_checkpoint = true);
std::string eval_stats_json(const EvalStats& stats);

// eval.split = folds: one metric block per fold (that fold's validation
// indices) plus image-pooled statistics, as a single JSON document.
struct FoldedEval {
    std::vector<EvalStats> folds;
    EvalStats pooled;
};
FoldedEval run_eval_folds(const RunConfig& cfg, const std::string& checkpoint_path);
std::string folded_eval_json(const FoldedEval& fe);

// Evaluation over explicit dataset indices with an existing model.
EvalStats evaluate_split(const CtoModel<float>& model, const Dataset& ds,
                         const std::vector<int>& indices);

struct PredictResult {
    std::string mask_path;
    std::string boundary_path; // empty when the variant has no boundary head
};
PredictResult run_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                          const std::string& image_path, const std::string& out_dir);

// End-to-end finite-difference check of a frozen-BN f64 toy model built from
// the run config (32x32 input). Samples at least `per_module` parameters per
// top-level module. inject_fault scales one analytic gradient by 1.01, which
// the check must flag.
GradCheckReport run_gradcheck(const RunConfig& cfg, bool inject_fault = false,
                              int per_module = 5);

struct FlopsReport {
    AttentionMacReport attention;          // analytic vs measured token mixing
    std::map<std::string, std::uint64_t> component_macs; // measured, one model forward
    std::uint64_t total_macs = 0;
    // probe conv: closed-form N*Cout*(Cin/g)*kh*kw*OH*OW vs instrumented count
    std::uint64_t conv_formula = 0, conv_measured = 0;
};
FlopsReport run_flops(const RunConfig& cfg);
std::string flops_report_text(const FlopsReport& r);

struct AblationRow {
    std::string variant;
    std::int64_t params = 0;
    double val_dice = 0, val_iou = 0;
    std::uint64_t hash = 0;
};
// Trains all six variants on identical folds and seeds; writes the
// tab-separated comparison table to `<metrics>.ablate.tsv`.
std::vector<AblationRow> run_ablate(const RunConfig& cfg);

} // namespace cto
