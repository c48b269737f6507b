#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <cfrg/common.hpp>
#include <cfrg/config.hpp>
#include <cfrg/data_io.hpp>

using namespace cfrg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("cfrg_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const {
        return (path / name).string();
    }
    static inline int counter = 0;
};

void gzip_file(const std::string& src, const std::string& dst) {
    std::ifstream in(src, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    gzFile out = gzopen(dst.c_str(), "wb");
    REQUIRE(out != nullptr);
    REQUIRE(gzwrite(out, bytes.data(), (unsigned)bytes.size()) ==
            (int)bytes.size());
    gzclose(out);
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("idx round trip recovers exact pixel bytes") {
    TempDir tmp;
    // two 2x3 images with distinctive byte values
    std::vector<uint8_t> px{0, 1, 2, 3, 4, 5, 250, 251, 252, 253, 254, 255};
    write_idx_images(tmp.file("imgs"), px, 2, 2, 3);
    write_idx_labels(tmp.file("lbls"), {7, 9});

    Dataset ds = load_idx(tmp.file("imgs"), tmp.file("lbls"));
    CHECK(ds.n == 2);
    CHECK(ds.img_rows == 2);
    CHECK(ds.img_cols == 3);
    for (size_t i = 0; i < px.size(); ++i)
        CHECK(ds.images[i] == doctest::Approx((double)px[i]));
    CHECK(ds.labels == std::vector<int32_t>{7, 9});
}

TEST_CASE("gzip-compressed inputs accepted by suffix") {
    TempDir tmp;
    std::vector<uint8_t> px(2 * 4 * 4, 128);
    write_idx_images(tmp.file("imgs"), px, 2, 4, 4);
    write_idx_labels(tmp.file("lbls"), {0, 3});
    gzip_file(tmp.file("imgs"), tmp.file("imgs.gz"));
    gzip_file(tmp.file("lbls"), tmp.file("lbls.gz"));

    Dataset ds = load_idx(tmp.file("imgs.gz"), tmp.file("lbls.gz"));
    CHECK(ds.n == 2);
    CHECK(ds.images[5] == doctest::Approx(128.0));
}

TEST_CASE("idx error paths are distinct") {
    TempDir tmp;
    std::vector<uint8_t> px(1 * 2 * 2, 9);
    write_idx_images(tmp.file("imgs"), px, 1, 2, 2);
    write_idx_labels(tmp.file("lbls"), {1});

    SUBCASE("wrong magic") {
        // patch the magic to 0x00000802
        std::fstream f(tmp.file("imgs"),
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(3);
        char b = 0x02;
        f.write(&b, 1);
        f.close();
        CHECK_THROWS_WITH_AS(load_idx(tmp.file("imgs"), tmp.file("lbls")),
                             doctest::Contains("unsupported IDX type"),
                             DataError);
    }
    SUBCASE("truncated payload") {
        fs::resize_file(tmp.file("imgs"), 16 + 2);  // header + 2 of 4 pixels
        CHECK_THROWS_WITH_AS(load_idx(tmp.file("imgs"), tmp.file("lbls")),
                             doctest::Contains("truncated"), DataError);
    }
    SUBCASE("count mismatch") {
        write_idx_labels(tmp.file("lbls2"), {1, 2});
        CHECK_THROWS_WITH_AS(load_idx(tmp.file("imgs"), tmp.file("lbls2")),
                             doctest::Contains("count mismatch"), DataError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_idx(tmp.file("nope"), tmp.file("lbls")), DataError);
    }
}

TEST_CASE("normalize applies the canonical affine transform") {
    Dataset ds;
    ds.n = 1;
    ds.img_rows = 1;
    ds.img_cols = 2;
    ds.images = {0.0, 255.0};
    ds.labels = {0};
    Dataset n = normalize(ds);
    CHECK(n.images[0] ==
          doctest::Approx((0.0 - kFmnistMean) / kFmnistStd).epsilon(1e-12));
    CHECK(n.images[0] == doctest::Approx(-0.8102).epsilon(1e-4));
    CHECK(n.images[1] ==
          doctest::Approx((1.0 - kFmnistMean) / kFmnistStd).epsilon(1e-12));
    CHECK(n.images[1] == doctest::Approx(2.0227).epsilon(1e-4));

    // idempotent on the normalized view
    Dataset again = normalize(n);
    CHECK(again.images == n.images);
}

TEST_CASE("canonical constants match statistics recomputed from raw files") {
    // needs the real dataset; skips quietly when it is not around
    const char* dir = std::getenv("CFRG_DATA_DIR");
    auto find = [&](const std::string& base) -> std::string {
        if (!dir) return "";
        for (const std::string& c :
             {std::string(dir) + "/" + base, std::string(dir) + "/" + base + ".gz"})
            if (fs::exists(c)) return c;
        return "";
    };
    const std::string imgs = find("train-images-idx3-ubyte");
    const std::string lbls = find("train-labels-idx1-ubyte");
    if (imgs.empty() || lbls.empty()) {
        MESSAGE("CFRG_DATA_DIR without the raw train split; skipping");
        return;
    }
    Dataset raw = load_idx(imgs, lbls);
    double mean = 0.0;
    for (double x : raw.images) mean += x / 255.0;
    mean /= (double)raw.images.size();
    double var = 0.0;
    for (double x : raw.images) {
        const double d = x / 255.0 - mean;
        var += d * d;
    }
    const double stddev = std::sqrt(var / (double)raw.images.size());
    CHECK(mean == doctest::Approx(kFmnistMean).epsilon(2e-4));
    CHECK(stddev == doctest::Approx(kFmnistStd).epsilon(2e-4));

    // and the normalized view is standardized within 1e-3
    Dataset norm = normalize(std::move(raw));
    double nmean = 0.0;
    for (double x : norm.images) nmean += x;
    nmean /= (double)norm.images.size();
    CHECK(std::fabs(nmean) < 1e-3);
}

TEST_CASE("batches partition the index range") {
    auto b = batches(300, 128, 5, 0);
    REQUIRE(b.size() == 3);
    CHECK(b[0].size() == 128);
    CHECK(b[1].size() == 128);
    CHECK(b[2].size() == 44);

    std::vector<bool> seen(300, false);
    for (const auto& batch : b)
        for (int32_t i : batch) {
            CHECK(!seen[(size_t)i]);
            seen[(size_t)i] = true;
        }
    CHECK(std::count(seen.begin(), seen.end(), true) == 300);
}

TEST_CASE("batches are a pure function of seed and epoch") {
    CHECK(batches(500, 64, 42, 3) == batches(500, 64, 42, 3));
    CHECK(batches(500, 64, 42, 3) != batches(500, 64, 42, 4));
    CHECK(batches(500, 64, 42, 3) != batches(500, 64, 43, 3));
    CHECK_THROWS_AS(batches(10, 0, 1, 0), std::invalid_argument);
}

TEST_CASE("metrics csv: empty log is header only") {
    MetricsLog log;
    log.probe_ids = {"l1", "l2"};
    CHECK(metrics_csv_string(log) ==
          "epoch,lr,train_loss,train_acc,test_acc,trainable_params,"
          "ncc_err_l1,ncc_err_l2,ncc_err_test_l1,ncc_err_test_l2,frozen_layers\n");
}

TEST_CASE("metrics csv: two-epoch golden fixture is byte exact") {
    MetricsLog log;
    log.probe_ids = {"l1", "l2"};
    EpochRow r0;
    r0.epoch = 0;
    r0.lr = 0.01;
    r0.train_loss = 2.302585;
    r0.train_acc = 0.1;
    r0.test_acc = 0.0976;
    r0.trainable_params = 152330;
    r0.ncc_train = {0.9, 0.85};
    r0.ncc_test = {0.91, 0.86};
    EpochRow r1;
    r1.epoch = 1;
    r1.lr = 0.01;
    r1.train_loss = 1.5;
    r1.train_acc = 0.5;
    r1.test_acc = 0.55;
    r1.trainable_params = 151050;
    r1.ncc_train = {0.5, 0.25};
    r1.ncc_test = {0.52, 0.26};
    r1.frozen_layers = {"fc5"};
    log.rows = {r0, r1};

    const std::string golden =
        "epoch,lr,train_loss,train_acc,test_acc,trainable_params,"
        "ncc_err_l1,ncc_err_l2,ncc_err_test_l1,ncc_err_test_l2,frozen_layers\n"
        "0,0.01,2.30259,0.1,0.0976,152330,0.9,0.85,0.91,0.86,\n"
        "1,0.01,1.5,0.5,0.55,151050,0.5,0.25,0.52,0.26,fc5\n";
    CHECK(metrics_csv_string(log) == golden);

    // writing twice produces identical bytes
    TempDir tmp;
    write_metrics_csv(log, tmp.file("a.csv"));
    write_metrics_csv(log, tmp.file("b.csv"));
    std::ifstream fa(tmp.file("a.csv"), std::ios::binary);
    std::ifstream fb(tmp.file("b.csv"), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)),
                   std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)),
                   std::istreambuf_iterator<char>());
    CHECK(sa == golden);
    CHECK(sa == sb);
}

TEST_CASE("metrics csv round-trips values at print precision") {
    MetricsLog log;
    log.probe_ids = {"p"};
    EpochRow r;
    r.epoch = 17;
    r.lr = 0.0012345678;
    r.train_loss = 0.98765432;
    r.train_acc = 0.333333333;
    r.test_acc = 0.666666666;
    r.trainable_params = 42;
    r.ncc_train = {0.111111111};
    r.ncc_test = {0.222222222};
    log.rows = {r};

    std::istringstream csv(metrics_csv_string(log));
    std::string header, line;
    std::getline(csv, header);
    std::getline(csv, line);
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    REQUIRE(cells.size() >= 8);
    CHECK(std::stoi(cells[0]) == 17);
    CHECK(std::stod(cells[1]) == doctest::Approx(r.lr).epsilon(1e-5));
    CHECK(std::stod(cells[2]) == doctest::Approx(r.train_loss).epsilon(1e-5));
    CHECK(std::stod(cells[6]) == doctest::Approx(0.111111111).epsilon(1e-5));
}

TEST_CASE("unwritable csv path raises a data error") {
    MetricsLog log;
    CHECK_THROWS_AS(write_metrics_csv(log, "/nonexistent_dir_xyz/out.csv"),
                    DataError);
}

TEST_CASE("experiment json round trip") {
    Experiment e = experiment_preset("etf-transformer");
    const std::string text = experiment_to_json(e);
    Experiment back = parse_experiment_json(text);
    CHECK(back.model.family == "vit");
    CHECK(back.model.vit.head_etf);
    CHECK(back.model.vit.ffn_etf_blocks == std::set<size_t>{0, 1, 2});
    CHECK(back.train.epochs == 300);
    CHECK(back.train.lr_decay_epochs == std::vector<int>{60, 120, 160});
    CHECK(!back.train.adaptive_epsilon.has_value());

    Experiment a = parse_experiment_json(experiment_to_json(
        experiment_preset("adaptive-etf")));
    CHECK(a.train.adaptive_epsilon == doctest::Approx(0.1));
    CHECK(a.model.mlp.frozen_suffix == 0);
}

TEST_CASE("unknown json keys are rejected") {
    CHECK_THROWS_WITH_AS(
        parse_experiment_json(R"({"model":{"family":"mlp","hidden":1},"train":{}})"),
        doctest::Contains("unknown key"), DataError);
    CHECK_THROWS_WITH_AS(
        parse_experiment_json(R"({"model":{"family":"mlp"},"train":{},"extra":1})"),
        doctest::Contains("unknown key"), DataError);
    CHECK_THROWS_AS(parse_experiment_json("{not json"), DataError);
}

TEST_CASE("preset table") {
    CHECK_THROWS_WITH_AS(experiment_preset("nope"),
                         doctest::Contains("baseline-mlp"),
                         std::invalid_argument);
    for (const auto& name : preset_names()) {
        Experiment e = experiment_preset(name);
        e.model.validate();
        e.train.validate();
    }
    CHECK(experiment_preset("last-two-layers-etf").model.mlp.frozen_suffix == 2);
    CHECK(experiment_preset("vit-blocks-4").model.vit.num_blocks == 4);
    CHECK(experiment_preset("desk-vit-etf").model.vit.model_dim == 128);
}

}  // TEST_SUITE
