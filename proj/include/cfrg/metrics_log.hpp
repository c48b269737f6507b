#pragma once

#include <string>
#include <vector>

namespace cfrg {

// One row per epoch. NCC errors are ordered like MetricsLog::probe_ids; NaN
// marks epochs where the probe pass was skipped (probe_interval_epochs > 1).
struct EpochRow {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    long long trainable_params = 0;
    std::vector<double> ncc_train;
    std::vector<double> ncc_test;
    std::vector<std::string> frozen_layers;  // ids, architecture order
};

struct MetricsLog {
    std::vector<std::string> probe_ids;
    std::vector<EpochRow> rows;
};

}  // namespace cfrg
