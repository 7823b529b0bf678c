// cto: training/evaluation harness for the boundary-guided dual-stream
// segmentation model on synthetic corpora.
//
// Exit codes: 0 ok, 1 usage/config, 2 data, 3 numeric failure.

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "cto/config.hpp"
#include "cto/synth.hpp"
#include "cto/threads.hpp"
#include "cto/train.hpp"

using namespace cto;

namespace {

int dispatch(const std::string& command, const std::string& config_path,
             const std::string& checkpoint, const std::string& image,
             const std::string& out_dir, bool inject_fault) {
    RunConfig cfg = load_config(config_path);
    const std::string ckpt = checkpoint.empty() ? cfg.checkpoint_path : checkpoint;

    if (command == "synth") {
        auto corpus = synth_generate(cfg.synth, cfg.data_dir);
        std::cout << "wrote " << corpus.samples.size() << " samples to " << corpus.dir << "\n";
        return 0;
    }
    if (command == "train") {
        auto summary = run_training(cfg);
        std::cout << "epochs: " << summary.epochs.size() << "\n";
        if (summary.best_epoch > 0 && summary.best_val_dice >= 0)
            std::cout << "best val dice: " << summary.best_val_dice << " (epoch "
                      << summary.best_epoch << ")\n";
        std::cout << "checkpoint: " << summary.checkpoint_path << "\n";
        std::cout << "metrics: " << summary.metrics_path << "\n";
        return 0;
    }
    if (command == "eval") {
        const std::string out = cfg.eval_split == "folds"
                                    ? folded_eval_json(run_eval_folds(cfg, ckpt))
                                    : eval_stats_json(run_eval(cfg, ckpt));
        const std::string path = cfg.metrics_path + ".eval.json";
        if (FILE* f = std::fopen(path.c_str(), "wb")) {
            std::fwrite(out.data(), 1, out.size(), f);
            std::fputc('\n', f);
            std::fclose(f);
        }
        std::cout << out << "\n";
        return 0;
    }
    if (command == "predict") {
        if (image.empty()) throw ConfigError("predict requires --image");
        auto result = run_predict(cfg, ckpt, image, out_dir.empty() ? "." : out_dir);
        std::cout << "mask: " << result.mask_path << "\n";
        if (!result.boundary_path.empty()) std::cout << "boundary: " << result.boundary_path << "\n";
        return 0;
    }
    if (command == "gradcheck") {
        auto report = run_gradcheck(cfg, inject_fault);
        for (const auto& entry : report.per_param)
            std::cout << (entry.passed ? "  ok  " : " FAIL ") << entry.name << " rel_err "
                      << entry.max_rel_err << "\n";
        std::cout << "worst: " << report.worst_param << " rel_err " << report.max_rel_err << "\n";
        if (!report.passed()) {
            std::cout << "gradient check FAILED for " << report.failing_param_names.size()
                      << " parameter(s)\n";
            return 3;
        }
        std::cout << "gradient check passed (" << report.per_param.size() << " parameters)\n";
        return 0;
    }
    if (command == "flops") {
        auto report = run_flops(cfg);
        std::cout << flops_report_text(report);
        return report.conv_formula == report.conv_measured ? 0 : 3;
    }
    if (command == "ablate") {
        auto rows = run_ablate(cfg);
        std::printf("variant\tparams\tval_dice\tval_iou\tconfig_hash\n");
        for (const auto& r : rows)
            std::printf("%s\t%lld\t%.6f\t%.6f\t%llx\n", r.variant.c_str(),
                        static_cast<long long>(r.params), r.val_dice, r.val_iou,
                        static_cast<unsigned long long>(r.hash));
        std::cout << "table: " << cfg.metrics_path << ".ablate.tsv\n";
        return 0;
    }
    throw ConfigError("unknown command '" + command + "'");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"boundary-guided dual-stream segmentation harness"};
    app.require_subcommand(1);

    std::string config_path, checkpoint, image, out_dir;
    bool deterministic = false, inject_fault = false;

    const std::vector<std::string> commands = {"synth",   "train",     "eval",  "predict",
                                               "gradcheck", "flops", "ablate"};
    for (const auto& name : commands) {
        CLI::App* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "run configuration file")->required();
        sub->add_option("--checkpoint", checkpoint, "checkpoint path override");
        sub->add_flag("--deterministic", deterministic,
                      "pin to one worker for bitwise-reproducible runs");
        if (name == "predict") {
            sub->add_option("--image", image, "input PPM image")->required();
            sub->add_option("--out", out_dir, "output directory");
        }
        if (name == "gradcheck")
            sub->add_flag("--inject-fault", inject_fault,
                          "corrupt one gradient; the check must fail");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    if (deterministic) set_thread_count(1);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        return dispatch(command, config_path, checkpoint, image, out_dir, inject_fault);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "config/shape error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
