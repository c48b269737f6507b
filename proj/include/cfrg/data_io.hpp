#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfrg/metrics_log.hpp"

namespace cfrg {

enum class Split { Train, Test };

// Images held as row-major N x (rows*cols) doubles: raw 0..255 byte values
// after load_idx, standardized after normalize().
struct Dataset {
    size_t n = 0;
    size_t img_rows = 0;
    size_t img_cols = 0;
    std::vector<double> images;  // n * img_rows * img_cols
    std::vector<int32_t> labels;
    Split split = Split::Train;
    bool normalized = false;

    size_t dims() const { return img_rows * img_cols; }
};

// Canonical Fashion-MNIST train-split statistics of the 0..1 pixel scale.
inline constexpr double kFmnistMean = 0.2860;
inline constexpr double kFmnistStd = 0.3530;

// IDX ingestion: big-endian magic 0x803 (images) / 0x801 (labels), big-endian
// dimension sizes, unsigned-byte payload. ".gz" suffixes are decompressed.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// x <- (x/255 - mean)/std with the canonical constants above
Dataset normalize(Dataset ds);

// Seeded permutation of [0, n), chunked; a pure function of (seed, epoch);
// the final short batch is kept.
std::vector<std::vector<int32_t>> batches(const Dataset& ds, int batch_size,
                                          uint64_t seed, int epoch);
std::vector<std::vector<int32_t>> batches(size_t n, int batch_size,
                                          uint64_t seed, int epoch);

void write_metrics_csv(const MetricsLog& log, const std::string& path);
std::string metrics_csv_string(const MetricsLog& log);

// Raw IDX writers (test fixtures and surrogate datasets go through the same
// reader as real data).
void write_idx_images(const std::string& path,
                      const std::vector<uint8_t>& pixels, size_t n,
                      size_t rows, size_t cols);
void write_idx_labels(const std::string& path,
                      const std::vector<uint8_t>& labels);

}  // namespace cfrg
