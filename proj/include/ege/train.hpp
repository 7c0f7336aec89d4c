#pragma once

// Training and evaluation driver shared by the CLI and the test harness.
//
// Each epoch: reshuffled (optionally augmented) batches, one AdamW step per
// batch with the deep-supervision loss, then a full evaluation pass at the
// 0.5 threshold. When the held-out split is empty (split ratio 1.0), the
// validation columns report train-set metrics instead; metrics.csv keeps its
// schema either way. With train.log_timing=false the wall_seconds column is
// written as zero so two same-seed runs produce byte-identical files.

#include "ege/config.hpp"
#include "ege/data.hpp"
#include "ege/loss.hpp"
#include "ege/model.hpp"
#include "ege/optim.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>

namespace ege {

inline RotationMode rotation_mode(const RunConfig& cfg) {
    return cfg.data_rotation == "continuous" ? RotationMode::continuous
                                             : RotationMode::right_angle;
}

struct EvalResult {
    double miou = 0.0;
    double dsc = 0.0;
    int64_t n_images = 0;
    ConfusionCounts counts;
};

// Dataset-level confusion accumulation over the final head's predictions.
template <typename T>
EvalResult evaluate(const EgeUnet<T>& model, const std::vector<SegSample>& samples,
                    int batch_size, double threshold = 0.5) {
    if (samples.empty()) throw ValueError("evaluate: empty evaluation set");
    EvalResult res;
    res.n_images = static_cast<int64_t>(samples.size());
    BatchOptions opt;
    opt.batch_size = batch_size;
    opt.augment = false;
    for (const auto& indices : epoch_plan(samples.size(), 0, opt)) {
        Batch batch = assemble_batch(samples, indices, 0, opt);
        Tensor<T> images = batch.images;
        if constexpr (!std::is_same_v<T, float>) {
            images = Tensor<T>::from_data(batch.images.shape(),
                                          std::vector<T>(batch.images.data().begin(),
                                                         batch.images.data().end()));
        }
        auto out = model.forward(images, nullptr);
        accumulate_confusion(out.logits[0],
                             Tensor<T>::from_data(batch.masks.shape(),
                                                  std::vector<T>(batch.masks.data().begin(),
                                                                 batch.masks.data().end())),
                             res.counts, threshold);
    }
    res.miou = mean_iou(res.counts);
    res.dsc = dice_score(res.counts);
    return res;
}

struct TrainResult {
    double best_miou = -1.0;
    int best_epoch = -1;
    double final_train_loss = 0.0;
    double final_miou = 0.0;
    std::string best_checkpoint;
    std::string last_checkpoint;
};

struct EpochLogRow {
    int epoch;
    double train_loss, val_miou, val_dsc, lr, wall_seconds;
};

inline void append_metrics_row(std::FILE* f, const EpochLogRow& r) {
    std::fprintf(f, "%d,%.8g,%.8g,%.8g,%.8g,%.3f\n", r.epoch, r.train_loss, r.val_miou, r.val_dsc,
                 r.lr, r.wall_seconds);
}

// Runs the full recipe from a parsed config. Writes metrics.csv,
// config.resolved, last.ckpt (every epoch) and best.ckpt (highest validation
// mIoU, earlier epoch winning ties) into out_dir.
inline TrainResult run_training(const RunConfig& cfg, const std::string& out_dir, int workers = 1,
                                bool quiet = false) {
    namespace fs = std::filesystem;
    cfg.validate();
    tune_allocator_for_training();
    fs::create_directories(out_dir);

    auto samples = load_dataset(cfg.data_dir, cfg.image_size);
    if (samples.size() < 1) throw IoError("no samples found under " + cfg.data_dir);
    SplitSpec split_spec;
    split_spec.ratio = cfg.data_split_ratio;
    split_spec.seed = cfg.data_seed;
    auto [train_set, test_set] = split(samples, split_spec);
    if (train_set.empty()) throw ValueError("train split is empty");
    const std::vector<SegSample>& val_set = test_set.empty() ? train_set : test_set;

    {
        std::ofstream echo(fs::path(out_dir) / "config.resolved");
        echo << render_config(cfg);
    }

    auto model = EgeUnet<float>::build(cfg.model_config(), Rng(cfg.seed));
    AdamWConfig ocfg;
    ocfg.weight_decay = cfg.optim_weight_decay;
    AdamW<float> opt(ocfg);
    CosineSchedule sched;
    sched.eta_max = cfg.optim_lr;
    sched.eta_min = cfg.sched_eta_min;
    sched.t_max = cfg.sched_t_max;
    LossWeights weights;
    weights.lambdas = cfg.loss_lambdas;

    BatchOptions bopt;
    bopt.batch_size = cfg.train_batch_size;
    bopt.seed = cfg.seed;
    bopt.augment = cfg.train_augment;
    bopt.rotation = rotation_mode(cfg);
    bopt.workers = workers;

    const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    std::FILE* metrics = std::fopen(metrics_path.c_str(), "w");
    if (!metrics) throw IoError("cannot open " + metrics_path);
    std::fprintf(metrics, "epoch,train_loss,val_miou,val_dsc,lr,wall_seconds\n");

    TrainResult result;
    result.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
    result.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
    const auto t0 = std::chrono::steady_clock::now();

    for (int epoch = 0; epoch < cfg.train_epochs; ++epoch) {
        const double lr = sched.lr_at(epoch);
        double loss_sum = 0.0;
        int64_t n_batches = 0;
        for (const auto& indices : epoch_plan(train_set.size(), epoch, bopt)) {
            Batch batch = assemble_batch(train_set, indices, epoch, bopt);
            Tape<float> tape;
            auto out = model.forward(batch.images, &tape);
            auto loss = deep_supervision_loss<float>(
                std::span<const Tensor<float>>(out.logits.data(), 6), batch.masks, weights, &tape);
            const double lval = loss.item();
            if (!std::isfinite(lval))
                throw ValueError("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch));
            model.params().zero_grad();
            backward(loss, tape);
            opt.step(model.params(), lr);
            loss_sum += lval;
            ++n_batches;
        }
        const double train_loss = loss_sum / static_cast<double>(n_batches);
        auto ev = evaluate(model, val_set, cfg.train_batch_size);

        EpochLogRow row{};
        row.epoch = epoch;
        row.train_loss = train_loss;
        row.val_miou = ev.miou;
        row.val_dsc = ev.dsc;
        row.lr = lr;
        row.wall_seconds =
            cfg.train_log_timing
                ? std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                : 0.0;
        append_metrics_row(metrics, row);
        std::fflush(metrics);
        if (!quiet)
            std::fprintf(stderr, "epoch %d loss %.5f miou %.4f dsc %.4f lr %.6g\n", epoch,
                         train_loss, ev.miou, ev.dsc, lr);

        model.save_checkpoint(result.last_checkpoint);
        if (ev.miou > result.best_miou) {
            result.best_miou = ev.miou;
            result.best_epoch = epoch;
            model.save_checkpoint(result.best_checkpoint);
        }
        result.final_train_loss = train_loss;
        result.final_miou = ev.miou;
    }
    std::fclose(metrics);
    return result;
}

}  // namespace ege
