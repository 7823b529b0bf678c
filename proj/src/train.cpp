#include "cto/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cto/checkpoint.hpp"
#include "cto/losses.hpp"
#include "cto/macs.hpp"
#include "cto/threads.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace cto {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ull;
constexpr std::uint64_t kAugmentStream = 0x61756700ull;

struct Welford {
    int n = 0;
    double mean = 0, m2 = 0;
    void add(double x) {
        ++n;
        const double d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    double stddev() const { return n > 0 ? std::sqrt(m2 / n) : 0.0; }
};

void check_labels(const Dataset& ds, int num_classes) {
    const int limit = num_classes == 1 ? 1 : num_classes - 1;
    for (const auto& s : ds.samples)
        for (auto v : s.mask.v)
            if (static_cast<int>(v) > limit)
                throw DataError("dataset sample '" + s.id + "' has label " +
                                std::to_string(static_cast<int>(v)) + " but num_classes is " +
                                std::to_string(num_classes));
}

void check_sample_dims(const Dataset& ds, const ModelConfig& mc) {
    for (const auto& s : ds.samples)
        if (s.image.h != mc.input_h || s.image.w != mc.input_w)
            throw DataError("dataset sample '" + s.id + "' is " + std::to_string(s.image.w) +
                            "x" + std::to_string(s.image.h) + " but the model expects " +
                            std::to_string(mc.input_w) + "x" + std::to_string(mc.input_h));
}

} // namespace

TensorF image_to_tensor(const ImageU8& img) {
    TensorF t(Shape{1, 3, img.h, img.w});
    const float inv = 1.0f / 255.0f;
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < img.h; ++r)
            for (int x = 0; x < img.w; ++x) t.at(0, c, r, x) = img.at(r, x, c) * inv;
    return t;
}

TensorF masks_to_target(const std::vector<const LabelMask*>& masks, int num_classes) {
    const int B = static_cast<int>(masks.size());
    const int H = masks[0]->h, W = masks[0]->w;
    const int K = num_classes == 1 ? 1 : num_classes;
    TensorF t(Shape{B, K, H, W});
    for (int b = 0; b < B; ++b)
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                const int label = masks[static_cast<size_t>(b)]->at(r, c);
                if (K == 1)
                    t.at(b, 0, r, c) = label != 0 ? 1.0f : 0.0f;
                else
                    t.at(b, label, r, c) = 1.0f;
            }
    return t;
}

TensorF boundary_target(const std::vector<const LabelMask*>& masks) {
    const int B = static_cast<int>(masks.size());
    const int H = masks[0]->h, W = masks[0]->w;
    TensorF t(Shape{B, 1, H / 4, W / 4});
    for (int b = 0; b < B; ++b) {
        const LabelMask band = maxpool_mask(boundary_gt(*masks[static_cast<size_t>(b)]), 4);
        for (int r = 0; r < band.h; ++r)
            for (int c = 0; c < band.w; ++c) t.at(b, 0, r, c) = band.at(r, c) ? 1.0f : 0.0f;
    }
    return t;
}

LabelMask prediction_to_mask(const TensorF& logits, int num_classes, int image_index) {
    const int K = logits.shape()[1], H = logits.shape()[2], W = logits.shape()[3];
    LabelMask mask(H, W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            if (num_classes == 1) {
                // sigmoid(z) > 0.5 iff z > 0
                mask.at(r, c) = logits.at(image_index, 0, r, c) > 0.0f ? 1 : 0;
            } else {
                int best = 0;
                float bv = logits.at(image_index, 0, r, c);
                for (int k = 1; k < K; ++k)
                    if (logits.at(image_index, k, r, c) > bv) {
                        bv = logits.at(image_index, k, r, c);
                        best = k;
                    }
                mask.at(r, c) = static_cast<std::uint8_t>(best);
            }
        }
    return mask;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace {

class Adam {
  public:
    Adam(nn::ParamStore<float>& store, const OptimizerConfig& cfg) : store_(store), cfg_(cfg) {
        for (auto& p : store.params())
            m_.emplace_back(p.value.numel(), 0.0f), v_.emplace_back(p.value.numel(), 0.0f);
    }

    void step() {
        ++t_;
        const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
        const float corr1 = 1.0f - std::pow(b1, static_cast<float>(t_));
        const float corr2 = 1.0f - std::pow(b2, static_cast<float>(t_));
        const float lr = static_cast<float>(cfg_.lr);
        const float eps = static_cast<float>(cfg_.eps);
        auto& params = store_.params();
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<float>& p = params[i].value;
            if (!p.has_grad()) continue;
            float* m = m_[i].data();
            float* v = v_[i].data();
            const float* g = p.grad();
            float* w = p.data();
            for (std::int64_t j = 0; j < p.numel(); ++j) {
                m[j] = b1 * m[j] + (1.0f - b1) * g[j];
                v[j] = b2 * v[j] + (1.0f - b2) * g[j] * g[j];
                const float mhat = m[j] / corr1;
                const float vhat = v[j] / corr2;
                w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }

  private:
    nn::ParamStore<float>& store_;
    OptimizerConfig cfg_;
    int t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

TensorF stack_images(const std::vector<TensorF>& parts) {
    const int B = static_cast<int>(parts.size());
    const Shape& s = parts[0].shape();
    TensorF out(Shape{B, s[1], s[2], s[3]});
    const std::int64_t per = parts[0].numel();
    for (int b = 0; b < B; ++b)
        std::copy_n(parts[static_cast<size_t>(b)].data(), per, out.data() + b * per);
    return out;
}

} // namespace

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

EvalStats evaluate_split(const CtoModel<float>& model, const Dataset& ds,
                         const std::vector<int>& indices) {
    const int num_classes = model.config().num_classes;
    EvalStats stats;
    Welford dice_w, iou_w, hd_w;
    std::map<int, Welford> per_class;
    for (int idx : indices) {
        const Sample& s = ds.samples[static_cast<size_t>(idx)];
        auto outputs = model.forward(nullptr, image_to_tensor(s.image), ops::NormMode::eval);
        const LabelMask pred = prediction_to_mask(outputs.seg_logits.back(), num_classes);
        double dice, iou;
        if (num_classes == 1) {
            dice = dice_metric(pred, s.mask);
            iou = iou_metric(pred, s.mask);
            per_class[1].add(dice);
        } else {
            dice = dice_metric_multiclass(pred, s.mask, num_classes);
            iou = iou_metric_multiclass(pred, s.mask, num_classes);
            for (int k = 0; k < num_classes; ++k) {
                LabelMask pk(pred.h, pred.w), gk(pred.h, pred.w);
                for (size_t i = 0; i < pred.v.size(); ++i) {
                    pk.v[i] = pred.v[i] == k;
                    gk.v[i] = s.mask.v[i] == k;
                }
                per_class[k].add(dice_metric(pk, gk));
            }
        }
        dice_w.add(dice);
        iou_w.add(iou);
        const double hd = avg_hausdorff(pred, s.mask);
        if (hausdorff_defined(hd)) hd_w.add(hd);
    }
    stats.n_images = dice_w.n;
    stats.dice_mean = dice_w.mean;
    stats.dice_std = dice_w.stddev();
    stats.iou_mean = iou_w.mean;
    stats.iou_std = iou_w.stddev();
    stats.hd_mean = hd_w.n ? hd_w.mean : 0.0;
    stats.hd_defined = hd_w.n;
    for (auto& [k, w] : per_class) stats.per_class_dice[k] = w.mean;
    return stats;
}

std::string eval_stats_json(const EvalStats& stats) {
    json j;
    j["n_images"] = stats.n_images;
    j["dice"] = stats.dice_mean;
    j["dice_std"] = stats.dice_std;
    j["iou"] = stats.iou_mean;
    j["iou_std"] = stats.iou_std;
    if (stats.hd_defined > 0)
        j["avg_hd"] = stats.hd_mean;
    else
        j["avg_hd"] = "undefined";
    j["avg_hd_defined_images"] = stats.hd_defined;
    json pc = json::object();
    for (auto& [k, v] : stats.per_class_dice) pc[std::to_string(k)] = v;
    j["per_class"] = pc;
    return j.dump();
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

TrainSummary run_training(const RunConfig& cfg) {
    cfg.validate();
    Dataset ds = load_pairs(cfg.data_dir);
    if (ds.empty()) throw DataError("training dataset at '" + cfg.data_dir + "' is empty");
    check_labels(ds, cfg.model.num_classes);
    check_sample_dims(ds, cfg.model);
    const FoldSplit split =
        fold_split(static_cast<int>(ds.size()), cfg.fold_k, cfg.fold_index, cfg.model.seed);

    CtoModel<float> model(cfg.model);
    if (!cfg.init_checkpoint.empty()) load_checkpoint(model.store(), cfg.init_checkpoint);
    Adam adam(model.store(), cfg.optimizer);
    LossConfig loss_cfg{cfg.model.alpha, cfg.model.levels, cfg.model.num_classes > 1};

    TrainSummary summary;
    summary.checkpoint_path = cfg.checkpoint_path;
    summary.metrics_path = cfg.metrics_path + ".train.jsonl";
    std::ofstream log(summary.metrics_path, std::ios::trunc);
    if (!log) throw DataError("cannot open metrics log '" + summary.metrics_path + "'");

    const bool has_boundary = cfg.model.flags.boundary != BoundaryKind::none;
    Tape<float> tape;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::vector<int> order = split.train;
        CounterRng shuffle(cfg.model.seed ^ static_cast<std::uint64_t>(epoch), kShuffleStream);
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
            const int j = static_cast<int>(shuffle.uniform_int(static_cast<std::uint64_t>(i) + 1));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        EpochLog ep;
        ep.epoch = epoch;
        ep.ce.assign(static_cast<size_t>(cfg.model.levels), 0.0);
        ep.miou.assign(static_cast<size_t>(cfg.model.levels), 0.0);
        int batches = 0;
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
            std::vector<TensorF> images;
            std::vector<Sample> augmented;
            std::vector<const LabelMask*> masks;
            std::vector<std::string> ids;
            for (size_t i = at; i < end; ++i) {
                const Sample& s = ds.samples[static_cast<size_t>(order[i])];
                ids.push_back(s.id);
                if (cfg.augment) {
                    CounterRng arng(cfg.model.seed ^
                                        (static_cast<std::uint64_t>(epoch) * 1000003ull +
                                         static_cast<std::uint64_t>(order[i])),
                                    kAugmentStream);
                    augmented.push_back(augment_sample(s, arng));
                } else {
                    augmented.push_back(s);
                }
            }
            for (const auto& s : augmented) {
                images.push_back(image_to_tensor(s.image));
                masks.push_back(&s.mask);
            }
            TensorF x = stack_images(images);
            TensorF y_seg = masks_to_target(masks, cfg.model.num_classes);
            TensorF y_bnd = has_boundary ? boundary_target(masks) : TensorF{};

            auto outputs = model.forward(&tape, x, ops::NormMode::train);
            auto breakdown = total_loss(&tape, outputs, y_seg, y_bnd, loss_cfg);
            if (!std::isfinite(breakdown.total_value)) {
                std::string batch_ids;
                for (const auto& id : ids) batch_ids += (batch_ids.empty() ? "" : ", ") + id;
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   " on batch [" + batch_ids + "]");
            }
            model.store().zero_grad();
            tape.backward(breakdown.total);
            adam.step();

            ep.total_loss += breakdown.total_value;
            for (int l = 0; l < cfg.model.levels; ++l) {
                ep.ce[static_cast<size_t>(l)] += breakdown.ce_levels[static_cast<size_t>(l)];
                ep.miou[static_cast<size_t>(l)] += breakdown.miou_levels[static_cast<size_t>(l)];
            }
            ep.boundary_dice += breakdown.boundary_dice;
            ++batches;
        }
        ep.total_loss /= batches;
        for (auto& v : ep.ce) v /= batches;
        for (auto& v : ep.miou) v /= batches;
        ep.boundary_dice /= batches;

        if (!split.val.empty()) {
            const EvalStats val = evaluate_split(model, ds, split.val);
            ep.val_dice = val.dice_mean;
            ep.val_iou = val.iou_mean;
            if (val.dice_mean > summary.best_val_dice) {
                summary.best_val_dice = val.dice_mean;
                summary.best_epoch = epoch;
                save_checkpoint(model.store(), cfg.checkpoint_path);
            }
        }

        json line;
        line["epoch"] = ep.epoch;
        line["total_loss"] = ep.total_loss;
        line["ce"] = ep.ce;
        line["miou"] = ep.miou;
        if (has_boundary) line["boundary_dice"] = ep.boundary_dice;
        if (ep.val_dice >= 0) {
            line["val_dice"] = ep.val_dice;
            line["val_iou"] = ep.val_iou;
        }
        log << line.dump() << "\n";
        summary.epochs.push_back(ep);
    }
    if (split.val.empty()) {
        // no validation fold: keep the final weights
        save_checkpoint(model.store(), cfg.checkpoint_path);
        summary.best_epoch = cfg.epochs;
    }
    return summary;
}

EvalStats run_eval(const RunConfig& cfg, const std::string& checkpoint_path, bool use_checkpoint) {
    cfg.validate();
    Dataset ds = load_pairs(cfg.data_dir);
    if (ds.empty()) throw DataError("eval dataset at '" + cfg.data_dir + "' is empty");
    const FoldSplit split =
        fold_split(static_cast<int>(ds.size()), cfg.fold_k, cfg.fold_index, cfg.model.seed);
    const std::vector<int>& indices = cfg.eval_split == "train" ? split.train : split.val;
    if (indices.empty())
        throw DataError("eval split '" + cfg.eval_split + "' is empty for fold " +
                        std::to_string(cfg.fold_index) + "/" + std::to_string(cfg.fold_k));
    CtoModel<float> model(cfg.model);
    if (use_checkpoint) load_checkpoint(model.store(), checkpoint_path);
    return evaluate_split(model, ds, indices);
}

FoldedEval run_eval_folds(const RunConfig& cfg, const std::string& checkpoint_path) {
    cfg.validate();
    if (cfg.fold_k < 2) throw DataError("eval.split = folds needs data.fold_k >= 2");
    Dataset ds = load_pairs(cfg.data_dir);
    if (ds.empty()) throw DataError("eval dataset at '" + cfg.data_dir + "' is empty");
    CtoModel<float> model(cfg.model);
    load_checkpoint(model.store(), checkpoint_path);
    FoldedEval fe;
    auto folds = kfold_split(static_cast<int>(ds.size()), cfg.fold_k, cfg.model.seed);
    std::vector<int> all;
    for (auto& fold : folds) {
        std::sort(fold.begin(), fold.end());
        fe.folds.push_back(evaluate_split(model, ds, fold));
        all.insert(all.end(), fold.begin(), fold.end());
    }
    std::sort(all.begin(), all.end());
    fe.pooled = evaluate_split(model, ds, all);
    return fe;
}

std::string folded_eval_json(const FoldedEval& fe) {
    json j;
    j["folds"] = json::array();
    for (const auto& s : fe.folds) j["folds"].push_back(json::parse(eval_stats_json(s)));
    j["pooled"] = json::parse(eval_stats_json(fe.pooled));
    return j.dump();
}

// ---------------------------------------------------------------------------
// prediction export
// ---------------------------------------------------------------------------

PredictResult run_predict(const RunConfig& cfg, const std::string& checkpoint_path,
                          const std::string& image_path, const std::string& out_dir) {
    CtoModel<float> model(cfg.model);
    load_checkpoint(model.store(), checkpoint_path);

    ImageU8 img = read_pnm(image_path);
    if (img.channels != 3) throw DataError("predict: input must be a P6 PPM image");
    const int H = img.h, W = img.w;
    const int ph = (32 - H % 32) % 32, pw = (32 - W % 32) % 32;
    TensorF x = image_to_tensor(img);
    if (ph || pw) x = ops::pad2d<float>(nullptr, x, 0, ph, 0, pw, ops::PadMode::symmetric);

    auto outputs = model.forward(nullptr, x, ops::NormMode::eval);
    TensorF logits = outputs.seg_logits.back();
    if (ph || pw) logits = ops::crop2d<float>(nullptr, logits, 0, 0, H, W);
    const LabelMask mask = prediction_to_mask(logits, cfg.model.num_classes);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const std::string stem = fs::path(image_path).stem().string();
    PredictResult result;
    result.mask_path = (fs::path(out_dir) / (stem + "_mask.pgm")).string();
    ImageU8 mask_img;
    mask_img.w = W;
    mask_img.h = H;
    mask_img.channels = 1;
    mask_img.v = mask.v;
    write_pgm(result.mask_path, mask_img);

    if (outputs.boundary_logits.defined()) {
        TensorF bprob = ops::sigmoid<float>(nullptr, outputs.boundary_logits);
        TensorF bfull = ops::upsample_bilinear<float>(nullptr, bprob, H + ph, W + pw);
        if (ph || pw) bfull = ops::crop2d<float>(nullptr, bfull, 0, 0, H, W);
        ImageU8 bimg;
        bimg.w = W;
        bimg.h = H;
        bimg.channels = 1;
        bimg.v.resize(static_cast<size_t>(H) * W);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                bimg.v[static_cast<size_t>(r) * W + c] =
                    static_cast<std::uint8_t>(std::lround(bfull.at(0, 0, r, c) * 255.0f));
        result.boundary_path = (fs::path(out_dir) / (stem + "_boundary.pgm")).string();
        write_pgm(result.boundary_path, bimg);
    }
    return result;
}

// ---------------------------------------------------------------------------
// gradient check driver
// ---------------------------------------------------------------------------

GradCheckReport run_gradcheck(const RunConfig& cfg, bool inject_fault, int per_module) {
    ModelConfig mc = cfg.model;
    mc.input_h = mc.input_w = 32;
    mc.validate();
    CtoModel<double> model(mc);

    // fixed input and targets: an off-center ellipse rendered the same way
    // the synthetic corpus draws shapes
    CounterRng rng(mc.seed, 0x67636b00ull);
    auto image = Tensor<double>::randn(Shape{1, 3, 32, 32}, rng, 0.35);
    ShapeParams blob;
    blob.cx = 14.0;
    blob.cy = 17.0;
    blob.a = 8.0;
    blob.b = 6.0;
    blob.theta = 0.5;
    const auto cov = render_shape_coverage(32, 32, blob);
    LabelMask mask(32, 32);
    for (size_t i = 0; i < cov.size(); ++i) mask.v[i] = cov[i] > 0.5 ? 1 : 0;

    const int K = mc.num_classes == 1 ? 1 : mc.num_classes;
    Tensor<double> y_seg(Shape{1, K, 32, 32});
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) {
            if (K == 1)
                y_seg.at(0, 0, r, c) = mask.at(r, c) ? 1.0 : 0.0;
            else
                y_seg.at(0, mask.at(r, c), r, c) = 1.0;
        }
    Tensor<double> y_bnd;
    if (mc.flags.boundary != BoundaryKind::none) {
        const LabelMask band = maxpool_mask(boundary_gt(mask), 4);
        y_bnd = Tensor<double>(Shape{1, 1, 8, 8});
        for (int r = 0; r < 8; ++r)
            for (int c = 0; c < 8; ++c) y_bnd.at(0, 0, r, c) = band.at(r, c) ? 1.0 : 0.0;
    }

    LossConfig loss_cfg{mc.alpha, mc.levels, mc.num_classes > 1};
    auto f = [&model, image, y_seg, y_bnd, loss_cfg](Tape<double>* tape) {
        // frozen BN: eval-mode statistics keep the function smooth and pure
        auto outputs = model.forward(tape, image, ops::NormMode::eval);
        return total_loss(tape, outputs, y_seg, y_bnd, loss_cfg).total;
    };

    // sample parameters per top-level module (prefix before the first '.')
    std::map<std::string, std::vector<const nn::Parameter<double>*>> groups;
    for (const auto& p : model.store().params())
        groups[p.name.substr(0, p.name.find('.'))].push_back(&p);
    std::vector<std::pair<std::string, Tensor<double>>> chosen;
    CounterRng pick(mc.seed, 0x7069636bull);
    for (auto& [prefix, list] : groups) {
        std::vector<const nn::Parameter<double>*> pool = list;
        for (int i = 0; i < per_module && !pool.empty(); ++i) {
            const size_t at = static_cast<size_t>(pick.uniform_int(pool.size()));
            chosen.push_back({pool[at]->name, pool[at]->value});
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(at));
        }
    }

    const std::string corrupt = inject_fault ? chosen.front().first : std::string{};
    return finite_diff_check<double>(f, chosen, 1e-5, 1e-4, mc.seed, 8, corrupt, 1.01);
}

// ---------------------------------------------------------------------------
// FLOP accounting
// ---------------------------------------------------------------------------

FlopsReport run_flops(const RunConfig& cfg) {
    cfg.validate();
    FlopsReport report;

    // token-mixing cost at the stitched feature resolution (H/4 padded to the
    // largest rate)
    const int m = cfg.model.vit.max_rate();
    auto pad_to = [m](int v) { return v + (m - v % m) % m; };
    const int gh = pad_to(cfg.model.input_h / 4), gw = pad_to(cfg.model.input_w / 4);
    report.attention =
        count_attention_macs<float>(gh, gw, cfg.model.vit.group_dim, cfg.model.vit.rates);

    // measured per-component cost of one full forward
    CtoModel<float> model(cfg.model);
    CounterRng rng(cfg.model.seed, 0x666c6f70ull);
    auto image = TensorF::randn(Shape{1, 3, cfg.model.input_h, cfg.model.input_w}, rng, 0.3);
    macs::MacCounter counter;
    {
        macs::CountingSession session(counter);
        (void)model.forward(nullptr, image, ops::NormMode::eval);
    }
    report.component_macs = counter.by_scope;
    report.total_macs = counter.total;

    // conv probe: closed form against the instrumented counter
    {
        const int N = 1, Cin = 8, Cout = 12, H = 16, W = 16, k = 3, stride = 1, pad = 1;
        CounterRng crng(7, 0x636f6e76ull);
        auto x = TensorF::randn(Shape{N, Cin, H, W}, crng);
        auto w = TensorF::randn(Shape{Cout, Cin, k, k}, crng);
        macs::MacCounter cc;
        {
            macs::CountingSession session(cc);
            (void)ops::conv2d<float>(nullptr, x, w, {}, stride, pad);
        }
        report.conv_measured = cc.total;
        report.conv_formula = static_cast<std::uint64_t>(N) * Cout * Cin * k * k * H * W;
    }
    return report;
}

std::string flops_report_text(const FlopsReport& r) {
    std::ostringstream os;
    os << "token-mixing MACs (n^2 d / s^2)\n";
    os << "rate\tanalytic\tmeasured\treduction\n";
    os << "dense\t" << r.attention.dense_macs << "\t" << r.attention.dense_macs << "\t1\n";
    for (const auto& row : r.attention.per_rate)
        os << row.rate << "\t" << row.analytic << "\t" << row.measured << "\t"
           << row.rate * row.rate << "\n";
    os << "\nconv probe: formula=" << r.conv_formula << " measured=" << r.conv_measured
       << (r.conv_formula == r.conv_measured ? " (exact)" : " (MISMATCH)") << "\n";
    os << "\nmodel forward MACs by component\n";
    for (const auto& [scope, macs] : r.component_macs) os << scope << "\t" << macs << "\n";
    os << "total\t" << r.total_macs << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// ablation sweep
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablate(const RunConfig& cfg) {
    cfg.validate();
    std::vector<AblationRow> rows;
    for (const auto& variant : ablation_variants()) {
        RunConfig vcfg = cfg;
        vcfg.variant = variant.name;
        vcfg.model.flags = variant.flags;
        vcfg.eval_split = "val";
        vcfg.checkpoint_path = cfg.checkpoint_path + "." + variant.name;
        vcfg.metrics_path = cfg.metrics_path + "." + variant.name;

        const TrainSummary summary = run_training(vcfg);
        const EvalStats stats = run_eval(vcfg, vcfg.checkpoint_path);
        AblationRow row;
        row.variant = variant.name;
        row.params = CtoModel<float>(vcfg.model).parameter_count();
        row.val_dice = stats.dice_mean;
        row.val_iou = stats.iou_mean;
        row.hash = config_hash(vcfg);
        rows.push_back(row);
        (void)summary;
    }

    const std::string table_path = cfg.metrics_path + ".ablate.tsv";
    std::ofstream out(table_path, std::ios::trunc);
    if (!out) throw DataError("cannot open ablation table '" + table_path + "'");
    out << "variant\tparams\tval_dice\tval_iou\tconfig_hash\n";
    for (const auto& r : rows) {
        std::ostringstream line;
        line.precision(6);
        line << std::fixed << r.variant << "\t" << r.params << "\t" << r.val_dice << "\t"
             << r.val_iou << "\t" << std::hex << r.hash;
        out << line.str() << "\n";
    }
    return rows;
}

} // namespace cto
