// Command-line entry points: train, eval, predict, analyze, gradcheck.
//
// Exit codes: 0 success; 1 generic failure (including gradcheck findings);
// 2 bad config (the offending key is printed); 3 missing or unreadable data;
// 4 incompatible checkpoint.

#include "ege/analysis.hpp"
#include "ege/config.hpp"
#include "ege/train.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>

namespace {

constexpr int64_t kParamBandLo = 45000, kParamBandHi = 61000, kParamTarget = 53000;
constexpr double kGflopBandLo = 0.050, kGflopBandHi = 0.094, kGflopTarget = 0.072;

ege::RunConfig load_config_or_exit(const std::string& path) {
    try {
        return ege::load_config(path);
    } catch (const ege::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        if (!e.bad_key.empty()) std::fprintf(stderr, "offending key: %s\n", e.bad_key.c_str());
        std::exit(2);
    } catch (const ege::IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        std::exit(3);
    }
}

int cmd_train(const std::string& config_path, const std::string& out_dir, uint64_t seed,
              bool seed_given, int workers) {
    ege::RunConfig cfg = load_config_or_exit(config_path);
    if (seed_given) cfg.seed = seed;
    try {
        auto result = ege::run_training(cfg, out_dir, workers);
        std::printf("best mIoU %.4f at epoch %d\n", result.best_miou, result.best_epoch);
        return 0;
    } catch (const ege::IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    }
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& config_path) {
    ege::RunConfig cfg = load_config_or_exit(config_path);
    ege::EgeUnet<float> model = [&] {
        try {
            return ege::EgeUnet<float>::load_checkpoint(ckpt, cfg.model_config());
        } catch (const ege::ValueError& e) {
            std::fprintf(stderr, "checkpoint error: %s\n", e.what());
            std::exit(4);
        }
    }();
    try {
        auto samples = ege::load_dataset(data_dir, cfg.image_size);
        if (samples.empty()) {
            std::fprintf(stderr, "no samples under %s\n", data_dir.c_str());
            return 3;
        }
        auto res = ege::evaluate(model, samples, cfg.train_batch_size);
        std::printf("{\"miou\": %.6f, \"dsc\": %.6f, \"n_images\": %" PRId64 "}\n", res.miou,
                    res.dsc, res.n_images);
        return 0;
    } catch (const ege::IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    }
}

int cmd_predict(const std::string& ckpt, const std::string& in_path, const std::string& out_path,
                const std::string& config_path) {
    ege::RunConfig cfg;
    if (!config_path.empty()) cfg = load_config_or_exit(config_path);
    ege::EgeUnet<float> model = [&] {
        try {
            return ege::EgeUnet<float>::load_checkpoint(ckpt, cfg.model_config());
        } catch (const ege::ValueError& e) {
            std::fprintf(stderr, "checkpoint error: %s\n", e.what());
            std::exit(4);
        }
    }();
    try {
        ege::Tensor<float> img = ege::read_image_rgb(in_path);
        const int64_t orig_h = img.dim(1), orig_w = img.dim(2);
        if (orig_h != cfg.image_size || orig_w != cfg.image_size)
            img = ege::resize_chw_bilinear(img, cfg.image_size, cfg.image_size);
        ege::Tensor<float> batch = ege::Tensor<float>::from_data(
            {1, 3, cfg.image_size, cfg.image_size},
            std::vector<float>(img.data().begin(), img.data().end()));
        auto out = model.forward(batch, nullptr);
        ege::Tensor<float> prob = ege::sigmoid(out.logits[0]);
        if (orig_h != cfg.image_size || orig_w != cfg.image_size)
            prob = ege::bilinear_resize(prob, ege::ResizeSpec{orig_h, orig_w, true});
        ege::Tensor<float> mask = ege::Tensor<float>::from_data(
            {1, orig_h, orig_w}, std::vector<float>(prob.data().begin(), prob.data().end()));
        ege::write_mask_png(out_path, mask);
        return 0;
    } catch (const ege::IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 3;
    }
}

int cmd_analyze(const std::string& config_path, const std::string& csv_path) {
    ege::RunConfig cfg;
    if (!config_path.empty()) cfg = load_config_or_exit(config_path);
    auto model = ege::EgeUnet<float>::build(cfg.model_config(), ege::Rng(cfg.seed));
    auto rep = ege::cost_report(model, 1, cfg.image_size, cfg.image_size);
    std::printf("%s", ege::format_cost_table(rep).c_str());

    const int64_t params = rep.total_params;
    const double gmac = static_cast<double>(rep.total_macs(true)) * 1e-9;
    const double gmac_conv_only = static_cast<double>(rep.total_macs(false)) * 1e-9;
    std::printf("\ninput: (1,%d,%d,%d)\n", 3, cfg.image_size, cfg.image_size);
    std::printf("parameters: %" PRId64 " (%.4f M)\n", params, params * 1e-6);
    std::printf("flops, mac_as_1_flop: %.4f G (conv-only %.4f G)\n", gmac, gmac_conv_only);
    std::printf("flops, mac_as_2_flops: %.4f G (conv-only %.4f G)\n", 2 * gmac,
                2 * gmac_conv_only);
    const bool params_pass = params >= kParamBandLo && params <= kParamBandHi;
    const bool flops_pass = gmac >= kGflopBandLo && gmac <= kGflopBandHi;
    std::printf("[%s] parameter budget: %" PRId64 " in [%" PRId64 ", %" PRId64 "] (target %.3f M)\n",
                params_pass ? "PASS" : "FAIL", params, kParamBandLo, kParamBandHi,
                kParamTarget * 1e-6);
    std::printf("[%s] flop budget (mac_as_1_flop): %.4f G in [%.3f, %.3f] (target %.3f G)\n",
                flops_pass ? "PASS" : "FAIL", gmac, kGflopBandLo, kGflopBandHi, kGflopTarget);

    if (!csv_path.empty()) {
        std::FILE* f = std::fopen(csv_path.c_str(), "w");
        if (!f) {
            std::fprintf(stderr, "cannot write %s\n", csv_path.c_str());
            return 3;
        }
        std::fprintf(f, "name,params,conv_macs,other_ops\n");
        for (const auto& r : rep.rows)
            std::fprintf(f, "%s,%" PRId64 ",%" PRId64 ",%" PRId64 "\n", r.name.c_str(), r.params,
                         r.conv_macs, r.other_ops);
        std::fprintf(f, "total,%" PRId64 ",%" PRId64 ",%" PRId64 "\n", rep.total_params,
                     rep.total_conv_macs, rep.total_other_ops);
        std::fclose(f);
    }
    return 0;
}

int cmd_gradcheck() {
    auto results = ege::run_all_gradchecks();
#ifdef EGE_INJECT_GRADCHECK_FAULT
    // harness self-test hook: one deliberately wrong backward rule
    {
        auto broken = [](std::vector<ege::Tensor<double>>& in, ege::Tape<double>* tape) {
            auto& a = in[0];
            ege::Tensor<double> out = ege::Tensor<double>::zeros(a.shape());
            for (int64_t i = 0; i < a.numel(); ++i)
                out.data_mut()[i] = a.data()[i] * a.data()[i];
            if (tape) {
                out.set_requires_grad(true);
                ege::Tensor<double> ac = a, oc = out;
                tape->record([ac, oc]() mutable {
                    auto go = oc.grad();
                    auto ga = ac.grad();
                    for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i];  // missing 2x
                });
            }
            return ege::project_to_scalar(out, tape, 7);
        };
        ege::Rng rng(99);
        std::vector<double> v(8);
        for (auto& x : v) x = rng.uniform(0.5, 2.0);
        auto t = ege::Tensor<double>::from_data({8}, std::move(v));
        t.set_requires_grad(true);
        results.push_back(ege::gradcheck("injected_fault", {t}, broken));
    }
#endif
    int failures = 0;
    for (const auto& r : results) {
        std::printf("%-16s %-4s max_rel_err %.3e (%" PRId64 " elements)\n", r.op.c_str(),
                    r.pass ? "ok" : "FAIL", r.max_rel_err, r.checked);
        if (!r.pass) ++failures;
    }
    if (failures) {
        std::printf("%d op(s) failed the gradient check\n", failures);
        return 1;
    }
    std::printf("all %zu gradient checks passed\n", results.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EGE-UNet style lightweight segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt, data_dir, in_path, out_path, csv_path;
    uint64_t seed = 0;
    int workers = 1;

    auto* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "run configuration file")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    auto* seed_opt = train->add_option("--seed", seed, "override the config seed");
    train->add_option("--workers", workers, "data-loading worker threads");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval->add_option("--data", data_dir, "dataset root")->required();
    eval->add_option("--config", config_path, "run configuration file")->required();
    eval->add_option("--seed", seed, "unused; accepted for uniformity");

    auto* predict = app.add_subcommand("predict", "write a PNG mask for one image");
    predict->add_option("--ckpt", ckpt, "checkpoint path")->required();
    predict->add_option("--in", in_path, "input image")->required();
    predict->add_option("--out", out_path, "output PNG path")->required();
    predict->add_option("--config", config_path, "run configuration file");
    predict->add_option("--seed", seed, "unused; accepted for uniformity");

    auto* analyze = app.add_subcommand("analyze", "parameter and FLOP report");
    analyze->add_option("--config", config_path, "run configuration file");
    analyze->add_option("--csv", csv_path, "also write machine-readable rows here");
    analyze->add_option("--seed", seed, "unused; accepted for uniformity");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every op");
    gradcheck->add_option("--seed", seed, "unused; accepted for uniformity");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed())
            return cmd_train(config_path, out_dir, seed, seed_opt->count() > 0, workers);
        if (eval->parsed()) return cmd_eval(ckpt, data_dir, config_path);
        if (predict->parsed()) return cmd_predict(ckpt, in_path, out_path, config_path);
        if (analyze->parsed()) return cmd_analyze(config_path, csv_path);
        if (gradcheck->parsed()) return cmd_gradcheck();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
