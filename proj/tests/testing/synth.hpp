#pragma once

// Seeded synthetic datasets for tests: Gaussian blob classification problems
// shaped like the flattened-image inputs the models expect.

#include <cfrg/common.hpp>
#include <cfrg/data_io.hpp>

namespace synth {

// 10-class Gaussian blobs in `dims` dimensions. Class c's mean sits at
// `mean_sep` on coordinate c; every class gets its own anisotropic noise
// pattern: `noise` baseline, with a seeded 10% of coordinates inflated by
// `noise_boost`. With a large boost the raw space stays NCC-imperfect while
// the variance patterns keep classes learnable.
inline cfrg::Dataset blobs(size_t n, size_t dims, size_t classes,
                           double mean_sep, double noise, double noise_boost,
                           uint64_t seed) {
    cfrg::Rng rng(seed);
    cfrg::Dataset ds;
    ds.n = n;
    ds.img_rows = 1;
    ds.img_cols = dims;
    ds.normalized = true;  // already feature-scaled; not raw pixel bytes
    ds.images.resize(n * dims);
    ds.labels.resize(n);

    std::vector<std::vector<double>> scale(classes,
                                           std::vector<double>(dims, noise));
    for (size_t c = 0; c < classes; ++c)
        for (size_t j = 0; j < dims; ++j)
            if (rng.uniform() < 0.1) scale[c][j] = noise * noise_boost;

    for (size_t i = 0; i < n; ++i) {
        const size_t c = i % classes;  // round-robin: every class present
        ds.labels[i] = (int32_t)c;
        double* row = ds.images.data() + i * dims;
        for (size_t j = 0; j < dims; ++j)
            row[j] = (j == c ? mean_sep : 0.0) + scale[c][j] * rng.gauss();
    }
    return ds;
}

// tight, well-separated blobs that any configuration learns in an epoch or two
inline cfrg::Dataset easy_blobs(size_t n, size_t dims, uint64_t seed) {
    return blobs(n, dims, 10, 4.0, 0.5, 1.0, seed);
}

namespace detail {

inline void box_blur(std::vector<double>& img, size_t side, int radius) {
    std::vector<double> tmp(img.size());
    const int s = (int)side;
    for (int pass = 0; pass < 2; ++pass) {
        for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x) {
                double acc = 0.0;
                int cnt = 0;
                for (int k = -radius; k <= radius; ++k) {
                    const int xx = pass == 0 ? x + k : x;
                    const int yy = pass == 0 ? y : y + k;
                    if (xx < 0 || xx >= s || yy < 0 || yy >= s) continue;
                    acc += img[(size_t)(yy * s + xx)];
                    cnt++;
                }
                tmp[(size_t)(y * s + x)] = acc / cnt;
            }
        img.swap(tmp);
    }
}

}  // namespace detail

// Procedural 10-class 28x28 grayscale stand-in used when the real dataset is
// unavailable: smoothed per-class texture templates, randomly shifted and
// contrast-jittered per sample, with additive smoothed noise. Raw bytes
// 0..255, same IDX pipeline as real data.
inline void write_surrogate_idx(const std::string& images_path,
                                const std::string& labels_path, size_t n,
                                uint64_t template_seed, uint64_t sample_seed) {
    constexpr size_t kSide = 28;
    constexpr size_t kClasses = 10;
    cfrg::Rng rng(sample_seed);

    // partially shared structure: classes within one group of five differ by a
    // weaker private component, making confusable pairs
    std::vector<std::vector<double>> templates(kClasses);
    std::vector<std::vector<double>> shared(kClasses / 2);
    for (size_t g = 0; g < shared.size(); ++g) {
        shared[g].resize(kSide * kSide);
        cfrg::Rng grng(cfrg::hash64(template_seed, 0x9900 + g));
        for (auto& v : shared[g]) v = grng.uniform();
        for (int pass = 0; pass < 3; ++pass) detail::box_blur(shared[g], kSide, 2);
    }
    for (size_t c = 0; c < kClasses; ++c) {
        std::vector<double> own(kSide * kSide);
        cfrg::Rng crng(cfrg::hash64(template_seed, 0x7400 + c));
        for (auto& v : own) v = crng.uniform();
        for (int pass = 0; pass < 3; ++pass) detail::box_blur(own, kSide, 2);

        std::vector<double> t(kSide * kSide);
        for (size_t i = 0; i < t.size(); ++i)
            t[i] = 0.55 * shared[c % shared.size()][i] + 0.45 * own[i];
        double lo = t[0], hi = t[0];
        for (double v : t) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        for (auto& v : t) v = 0.2 + 0.6 * (v - lo) / (hi - lo + 1e-12);
        templates[c] = std::move(t);
    }

    std::vector<uint8_t> pixels(n * kSide * kSide);
    std::vector<uint8_t> labels(n);
    for (size_t i = 0; i < n; ++i) {
        const size_t c = i % kClasses;
        labels[i] = (uint8_t)c;
        const int dx = (int)rng.bounded(11) - 5;
        const int dy = (int)rng.bounded(11) - 5;
        const double contrast = rng.uniform(0.6, 1.4);
        const double brightness = rng.uniform(-0.12, 0.12);

        std::vector<double> noise(kSide * kSide);
        for (auto& v : noise) v = rng.gauss();
        detail::box_blur(noise, kSide, 1);

        uint8_t* out = pixels.data() + i * kSide * kSide;
        for (size_t y = 0; y < kSide; ++y)
            for (size_t x = 0; x < kSide; ++x) {
                const size_t sy = (y + kSide + (size_t)(dy + (int)kSide)) % kSide;
                const size_t sx = (x + kSide + (size_t)(dx + (int)kSide)) % kSide;
                double v = contrast * templates[c][sy * kSide + sx] +
                           brightness + 0.32 * noise[y * kSide + x];
                v = std::min(1.0, std::max(0.0, v));
                out[y * kSide + x] = (uint8_t)(v * 255.0 + 0.5);
            }
    }
    cfrg::write_idx_images(images_path, pixels, n, kSide, kSide);
    cfrg::write_idx_labels(labels_path, labels);
}

}  // namespace synth
