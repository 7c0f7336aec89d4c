#pragma once

// Dataset ingestion and augmentation.
//
// Layout on disk: <root>/images/<id>.(png|jpg|jpeg) with 8-bit RGB content
// and <root>/masks/<id>.png with 8-bit grayscale content. Images are loaded
// to [0,1], resized bilinearly to the working resolution; masks are resized
// nearest-neighbor and binarized at 127.5/255. Augmentation draws horizontal
// and vertical flips at probability 0.5 each and a rotation from
// {0, 90, 180, 270} degrees (a config option switches to continuous +-30
// degrees with nearest resampling); image and mask always receive the
// identical transform. All randomness comes from caller-owned streams keyed
// by (seed, epoch, sample), so epochs are reproducible and batch assembly
// can be parallelized without changing results.

#include "ege/core.hpp"
#include "ege/ops.hpp"
#include "ege/rng.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <filesystem>
#include <future>
#include <map>
#include <string>

namespace ege {

struct SegSample {
    std::string id;             // filename stem
    Tensor<float> image;        // (3, H, W) in [0, 1]
    Tensor<float> mask;         // (1, H, W) in {0, 1}
};

enum class RotationMode { right_angle, continuous };

// ---------------------------------------------------------------------------
// Image IO (OpenCV codecs; all resampling is done in-house)
// ---------------------------------------------------------------------------

inline Tensor<float> read_image_rgb(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_COLOR);
    if (img.empty()) throw IoError("cannot read image: " + path);
    const int h = img.rows, w = img.cols;
    std::vector<float> data(static_cast<size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const cv::Vec3b bgr = img.at<cv::Vec3b>(y, x);
            data[(0 * h + y) * w + x] = bgr[2] / 255.0f;
            data[(1 * h + y) * w + x] = bgr[1] / 255.0f;
            data[(2 * h + y) * w + x] = bgr[0] / 255.0f;
        }
    return Tensor<float>::from_data({3, h, w}, std::move(data));
}

inline Tensor<float> read_mask_gray(const std::string& path) {
    cv::Mat img = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (img.empty()) throw IoError("cannot read mask: " + path);
    const int h = img.rows, w = img.cols;
    std::vector<float> data(static_cast<size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) data[y * static_cast<size_t>(w) + x] = img.at<uint8_t>(y, x);
    return Tensor<float>::from_data({1, h, w}, std::move(data));
}

// Writes a single-channel 8-bit PNG with values {0, 255}.
inline void write_mask_png(const std::string& path, const Tensor<float>& mask01) {
    if (mask01.rank() != 3 || mask01.dim(0) != 1)
        throw ShapeError("write_mask_png: expected (1,H,W), got " + shape_str(mask01.shape()));
    const int h = static_cast<int>(mask01.dim(1)), w = static_cast<int>(mask01.dim(2));
    cv::Mat img(h, w, CV_8UC1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img.at<uint8_t>(y, x) = mask01.data()[y * static_cast<int64_t>(w) + x] >= 0.5f ? 255 : 0;
    if (!cv::imwrite(path, img)) throw IoError("cannot write " + path);
}

// Writes an 8-bit RGB PNG from a (3,H,W) tensor in [0,1].
inline void write_image_png(const std::string& path, const Tensor<float>& image) {
    if (image.rank() != 3 || image.dim(0) != 3)
        throw ShapeError("write_image_png: expected (3,H,W), got " + shape_str(image.shape()));
    const int h = static_cast<int>(image.dim(1)), w = static_cast<int>(image.dim(2));
    cv::Mat img(h, w, CV_8UC3);
    auto v = image.data();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto q = [&](int c) {
                float f = v[(c * h + y) * static_cast<int64_t>(w) + x];
                return static_cast<uint8_t>(std::clamp(f * 255.0f + 0.5f, 0.0f, 255.0f));
            };
            img.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));
        }
    if (!cv::imwrite(path, img)) throw IoError("cannot write " + path);
}

// ---------------------------------------------------------------------------
// Resampling helpers for (C, H, W) sample tensors
// ---------------------------------------------------------------------------

inline Tensor<float> resize_chw_bilinear(const Tensor<float>& t, int64_t oh, int64_t ow) {
    Tensor<float> batched = Tensor<float>::from_data({1, t.dim(0), t.dim(1), t.dim(2)},
                                                     std::vector<float>(t.data().begin(),
                                                                        t.data().end()));
    Tensor<float> r = bilinear_resize(batched, ResizeSpec{oh, ow, true});
    return Tensor<float>::from_data({t.dim(0), oh, ow},
                                    std::vector<float>(r.data().begin(), r.data().end()));
}

inline Tensor<float> resize_chw_nearest(const Tensor<float>& t, int64_t oh, int64_t ow) {
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<float> out = Tensor<float>::zeros({c, oh, ow});
    auto tv = t.data();
    auto ov = out.data_mut();
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < oh; ++y) {
            // midpoint mapping keeps nearest-neighbor symmetric
            int64_t sy = std::min<int64_t>(h - 1, static_cast<int64_t>((y + 0.5) * h / oh));
            for (int64_t x = 0; x < ow; ++x) {
                int64_t sx = std::min<int64_t>(w - 1, static_cast<int64_t>((x + 0.5) * w / ow));
                ov[(ch * oh + y) * ow + x] = tv[(ch * h + sy) * w + sx];
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset loading and splitting
// ---------------------------------------------------------------------------

inline std::vector<SegSample> load_dataset(const std::string& root, int image_size = 256) {
    namespace fs = std::filesystem;
    const fs::path images = fs::path(root) / "images";
    const fs::path masks = fs::path(root) / "masks";
    if (!fs::is_directory(images) || !fs::is_directory(masks))
        throw IoError("dataset root must contain images/ and masks/: " + root);
    std::map<std::string, fs::path> stems;  // sorted by id
    for (const auto& e : fs::directory_iterator(images)) {
        if (!e.is_regular_file()) continue;
        std::string ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
        if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
        stems[e.path().stem().string()] = e.path();
    }
    std::vector<SegSample> samples;
    samples.reserve(stems.size());
    for (const auto& [id, img_path] : stems) {
        const fs::path mask_path = masks / (id + ".png");
        if (!fs::exists(mask_path)) throw IoError("missing mask for image stem: " + id);
        SegSample s;
        s.id = id;
        Tensor<float> img = read_image_rgb(img_path.string());
        if (img.dim(1) != image_size || img.dim(2) != image_size)
            img = resize_chw_bilinear(img, image_size, image_size);
        s.image = img;
        Tensor<float> m = read_mask_gray(mask_path.string());
        if (m.dim(1) != image_size || m.dim(2) != image_size)
            m = resize_chw_nearest(m, image_size, image_size);
        for (auto& v : m.data_mut()) v = v >= 127.5f ? 1.0f : 0.0f;
        s.mask = m;
        samples.push_back(std::move(s));
    }
    return samples;
}

struct SplitSpec {
    double ratio = 0.7;
    uint64_t seed = 0;
};

// Seeded shuffle over the (sorted) samples; first floor(ratio*N) go to train.
inline std::pair<std::vector<SegSample>, std::vector<SegSample>> split(
    const std::vector<SegSample>& samples, const SplitSpec& spec) {
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::stream(spec.seed, 0x517u, 1);
    rng.shuffle(order.begin(), order.end());
    const size_t n_train = static_cast<size_t>(spec.ratio * static_cast<double>(samples.size()));
    std::vector<SegSample> train, test;
    for (size_t i = 0; i < order.size(); ++i)
        (i < n_train ? train : test).push_back(samples[order[i]]);
    return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor<float> flip_h(const Tensor<float>& t) {
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<float> out = Tensor<float>::zeros(t.shape());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                out.data_mut()[(ch * h + y) * w + x] = t.data()[(ch * h + y) * w + (w - 1 - x)];
    return out;
}

inline Tensor<float> flip_v(const Tensor<float>& t) {
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor<float> out = Tensor<float>::zeros(t.shape());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                out.data_mut()[(ch * h + y) * w + x] = t.data()[(ch * h + (h - 1 - y)) * w + x];
    return out;
}

// Quarter-turn counter-clockwise: out(y, x) = in(x, W-1-y) for square inputs.
inline Tensor<float> rot90_ccw(const Tensor<float>& t) {
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    if (h != w) throw ShapeError("rot90: requires square spatial dims");
    Tensor<float> out = Tensor<float>::zeros(t.shape());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x)
                out.data_mut()[(ch * h + y) * w + x] = t.data()[(ch * h + x) * w + (w - 1 - y)];
    return out;
}

// Rotation by an arbitrary angle with nearest-neighbor resampling; source
// coordinates falling outside the image are clamped to the border.
inline Tensor<float> rotate_nearest(const Tensor<float>& t, double degrees) {
    const int64_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    Tensor<float> out = Tensor<float>::zeros(t.shape());
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                const double dy = y - cy, dx = x - cx;
                const double sy = cs * dy - sn * dx + cy;
                const double sx = sn * dy + cs * dx + cx;
                int64_t iy = std::clamp<int64_t>(static_cast<int64_t>(std::lround(sy)), 0, h - 1);
                int64_t ix = std::clamp<int64_t>(static_cast<int64_t>(std::lround(sx)), 0, w - 1);
                out.data_mut()[(ch * h + y) * w + x] = t.data()[(ch * h + iy) * w + ix];
            }
    return out;
}

}  // namespace detail

// Applies the same randomized flips/rotation to image and mask. The draw
// order is fixed: horizontal flip, vertical flip, rotation.
inline SegSample augment(const SegSample& s, Rng& rng,
                         RotationMode mode = RotationMode::right_angle) {
    SegSample out = s;
    const bool hflip = rng.bernoulli(0.5);
    const bool vflip = rng.bernoulli(0.5);
    if (hflip) {
        out.image = detail::flip_h(out.image);
        out.mask = detail::flip_h(out.mask);
    }
    if (vflip) {
        out.image = detail::flip_v(out.image);
        out.mask = detail::flip_v(out.mask);
    }
    if (mode == RotationMode::right_angle) {
        const uint32_t quarter_turns = rng.next_below(4);
        for (uint32_t k = 0; k < quarter_turns; ++k) {
            out.image = detail::rot90_ccw(out.image);
            out.mask = detail::rot90_ccw(out.mask);
        }
    } else {
        const double angle = rng.uniform(-30.0, 30.0);
        out.image = detail::rotate_nearest(out.image, angle);
        out.mask = detail::rotate_nearest(out.mask, angle);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

struct Batch {
    Tensor<float> images;  // (B, 3, S, S)
    Tensor<float> masks;   // (B, 1, S, S)
    std::vector<size_t> indices;
};

struct BatchOptions {
    int batch_size = 8;
    uint64_t seed = 0;
    bool augment = true;
    RotationMode rotation = RotationMode::right_angle;
    int workers = 1;
};

// Epoch-wise reshuffled index batches; the last partial batch is kept.
inline std::vector<std::vector<size_t>> epoch_plan(size_t n_samples, int epoch,
                                                   const BatchOptions& opt) {
    std::vector<size_t> order(n_samples);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng = Rng::stream(opt.seed, 0x9e3779b9u, static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(order.begin(), order.end());
    std::vector<std::vector<size_t>> plan;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(opt.batch_size)) {
        const size_t stop = std::min(order.size(), start + static_cast<size_t>(opt.batch_size));
        plan.emplace_back(order.begin() + static_cast<ptrdiff_t>(start),
                          order.begin() + static_cast<ptrdiff_t>(stop));
    }
    return plan;
}

// Materializes one batch. Each sample's augmentation stream is keyed by
// (seed, epoch, dataset index), so results do not depend on shuffle position
// or worker count.
inline Batch assemble_batch(const std::vector<SegSample>& samples,
                            const std::vector<size_t>& indices, int epoch,
                            const BatchOptions& opt) {
    auto prepare = [&](size_t dataset_idx) {
        if (!opt.augment) return samples[dataset_idx];
        Rng r = Rng::stream(opt.seed, static_cast<uint64_t>(epoch) + 1,
                            static_cast<uint64_t>(dataset_idx) + 1);
        return augment(samples[dataset_idx], r, opt.rotation);
    };
    const int64_t b = static_cast<int64_t>(indices.size());
    std::vector<SegSample> prepped(static_cast<size_t>(b));
    if (opt.workers > 1) {
        std::vector<std::future<SegSample>> futs;
        futs.reserve(static_cast<size_t>(b));
        for (size_t idx : indices) futs.push_back(std::async(std::launch::async, prepare, idx));
        for (int64_t i = 0; i < b; ++i) prepped[static_cast<size_t>(i)] = futs[i].get();
    } else {
        for (int64_t i = 0; i < b; ++i) prepped[static_cast<size_t>(i)] = prepare(indices[i]);
    }
    const int64_t h = prepped[0].image.dim(1), w = prepped[0].image.dim(2);
    Batch batch;
    batch.images = Tensor<float>::uninit({b, 3, h, w});
    batch.masks = Tensor<float>::uninit({b, 1, h, w});
    for (int64_t i = 0; i < b; ++i) {
        std::copy(prepped[i].image.data().begin(), prepped[i].image.data().end(),
                  batch.images.data_mut().begin() + i * 3 * h * w);
        std::copy(prepped[i].mask.data().begin(), prepped[i].mask.data().end(),
                  batch.masks.data_mut().begin() + i * h * w);
    }
    batch.indices = indices;
    return batch;
}

// Convenience for small datasets and tests; training iterates the plan and
// assembles one batch at a time instead.
inline std::vector<Batch> epoch_batches(const std::vector<SegSample>& samples, int epoch,
                                        const BatchOptions& opt) {
    std::vector<Batch> batches;
    for (const auto& indices : epoch_plan(samples.size(), epoch, opt))
        batches.push_back(assemble_batch(samples, indices, epoch, opt));
    return batches;
}

}  // namespace ege
