#include "cfrg/data_io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cfrg/common.hpp"

namespace cfrg {

namespace {

// gzopen reads plain files transparently, so one path covers both suffixes
struct GzFile {
    gzFile f = nullptr;
    std::string path;

    explicit GzFile(const std::string& p) : path(p) {
        f = gzopen(p.c_str(), "rb");
        if (!f) throw DataError("cannot open " + p);
    }
    ~GzFile() {
        if (f) gzclose(f);
    }
    GzFile(const GzFile&) = delete;

    void read_exact(void* dst, size_t n) {
        const int got = gzread(f, dst, (unsigned)n);
        if (got < 0 || (size_t)got != n)
            throw DataError("truncated payload in " + path + " (wanted " +
                            std::to_string(n) + " bytes, got " +
                            std::to_string(got < 0 ? 0 : got) + ")");
    }

    uint32_t read_be32() {
        uint8_t b[4];
        read_exact(b, 4);
        return ((uint32_t)b[0] << 24) | ((uint32_t)b[1] << 16) |
               ((uint32_t)b[2] << 8) | (uint32_t)b[3];
    }
};

constexpr uint32_t kImagesMagic = 0x00000803;
constexpr uint32_t kLabelsMagic = 0x00000801;

void append_be32(std::string& out, uint32_t v) {
    out.push_back((char)((v >> 24) & 0xff));
    out.push_back((char)((v >> 16) & 0xff));
    out.push_back((char)((v >> 8) & 0xff));
    out.push_back((char)(v & 0xff));
}

void format_sig6(std::string& out, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    out += buf;
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    Dataset ds;

    {
        GzFile f(images_path);
        const uint32_t magic = f.read_be32();
        if (magic != kImagesMagic)
            throw DataError("unsupported IDX type in " + images_path +
                            ": magic 0x" + [&] {
                                char b[16];
                                std::snprintf(b, sizeof(b), "%08x", magic);
                                return std::string(b);
                            }() + ", expected 0x00000803");
        const uint32_t n = f.read_be32();
        const uint32_t rows = f.read_be32();
        const uint32_t cols = f.read_be32();
        if (n == 0 || rows == 0 || cols == 0)
            throw DataError("empty image dimensions in " + images_path);
        std::vector<uint8_t> raw((size_t)n * rows * cols);
        f.read_exact(raw.data(), raw.size());
        ds.n = n;
        ds.img_rows = rows;
        ds.img_cols = cols;
        ds.images.resize(raw.size());
        for (size_t i = 0; i < raw.size(); ++i) ds.images[i] = (double)raw[i];
    }

    {
        GzFile f(labels_path);
        const uint32_t magic = f.read_be32();
        if (magic != kLabelsMagic)
            throw DataError("unsupported IDX type in " + labels_path +
                            ": expected label magic 0x00000801");
        const uint32_t n = f.read_be32();
        if (n != ds.n)
            throw DataError("count mismatch: " + std::to_string(ds.n) +
                            " images in " + images_path + " vs " +
                            std::to_string(n) + " labels in " + labels_path);
        std::vector<uint8_t> raw(n);
        f.read_exact(raw.data(), raw.size());
        ds.labels.resize(n);
        for (size_t i = 0; i < n; ++i) {
            if (raw[i] > 9)
                throw DataError("label " + std::to_string((int)raw[i]) +
                                " outside [0,10) at index " + std::to_string(i) +
                                " in " + labels_path);
            ds.labels[i] = (int32_t)raw[i];
        }
    }
    return ds;
}

Dataset normalize(Dataset ds) {
    if (ds.normalized) return ds;
    for (double& x : ds.images) x = (x / 255.0 - kFmnistMean) / kFmnistStd;
    ds.normalized = true;
    return ds;
}

std::vector<std::vector<int32_t>> batches(size_t n, int batch_size,
                                          uint64_t seed, int epoch) {
    if (batch_size < 1)
        throw std::invalid_argument("batches: batch_size must be >= 1");
    std::vector<int32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hash64(seed, (uint64_t)epoch));
    rng.shuffle(order);

    std::vector<std::vector<int32_t>> out;
    for (size_t start = 0; start < n; start += (size_t)batch_size) {
        const size_t end = std::min(n, start + (size_t)batch_size);
        out.emplace_back(order.begin() + start, order.begin() + end);
    }
    return out;
}

std::vector<std::vector<int32_t>> batches(const Dataset& ds, int batch_size,
                                          uint64_t seed, int epoch) {
    return batches(ds.n, batch_size, seed, epoch);
}

std::string metrics_csv_string(const MetricsLog& log) {
    std::string out;
    out += "epoch,lr,train_loss,train_acc,test_acc,trainable_params";
    for (const auto& pid : log.probe_ids) out += ",ncc_err_" + pid;
    for (const auto& pid : log.probe_ids) out += ",ncc_err_test_" + pid;
    out += ",frozen_layers\n";

    for (const EpochRow& r : log.rows) {
        out += std::to_string(r.epoch);
        out += ',';
        format_sig6(out, r.lr);
        out += ',';
        format_sig6(out, r.train_loss);
        out += ',';
        format_sig6(out, r.train_acc);
        out += ',';
        format_sig6(out, r.test_acc);
        out += ',';
        out += std::to_string(r.trainable_params);
        for (size_t i = 0; i < log.probe_ids.size(); ++i) {
            out += ',';
            format_sig6(out, i < r.ncc_train.size()
                                 ? r.ncc_train[i]
                                 : std::nan(""));
        }
        for (size_t i = 0; i < log.probe_ids.size(); ++i) {
            out += ',';
            format_sig6(out, i < r.ncc_test.size() ? r.ncc_test[i]
                                                   : std::nan(""));
        }
        out += ',';
        for (size_t i = 0; i < r.frozen_layers.size(); ++i) {
            if (i) out += ';';
            out += r.frozen_layers[i];
        }
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const MetricsLog& log, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write metrics csv to " + path);
    const std::string s = metrics_csv_string(log);
    f.write(s.data(), (std::streamsize)s.size());
    if (!f) throw DataError("short write to " + path);
}

void write_idx_images(const std::string& path,
                      const std::vector<uint8_t>& pixels, size_t n,
                      size_t rows, size_t cols) {
    if (pixels.size() != n * rows * cols)
        throw std::invalid_argument("write_idx_images: payload size mismatch");
    std::string header;
    append_be32(header, kImagesMagic);
    append_be32(header, (uint32_t)n);
    append_be32(header, (uint32_t)rows);
    append_be32(header, (uint32_t)cols);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(header.data(), (std::streamsize)header.size());
    f.write((const char*)pixels.data(), (std::streamsize)pixels.size());
    if (!f) throw DataError("short write to " + path);
}

void write_idx_labels(const std::string& path,
                      const std::vector<uint8_t>& labels) {
    std::string header;
    append_be32(header, kLabelsMagic);
    append_be32(header, (uint32_t)labels.size());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f.write(header.data(), (std::streamsize)header.size());
    f.write((const char*)labels.data(), (std::streamsize)labels.size());
    if (!f) throw DataError("short write to " + path);
}

}  // namespace cfrg
