#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cfrg {

struct MlpConfig {
    size_t input_dim = 784;
    size_t hidden_width = 128;
    size_t num_layers = 5;
    size_t num_classes = 10;
    size_t frozen_suffix = 0;  // final n linear layers ETF-frozen from init

    void validate() const;
};

struct VitConfig {
    size_t image_size = 28;
    size_t patch_size = 4;
    size_t num_blocks = 3;
    size_t num_heads = 8;
    size_t head_dim = 64;
    size_t model_dim = 512;  // must equal num_heads * head_dim
    size_t ffn_hidden = 2048;
    size_t num_classes = 10;
    bool head_etf = false;
    std::set<size_t> ffn_etf_blocks;  // 0-based block indices

    size_t patches_per_side() const { return image_size / patch_size; }
    size_t num_patches() const { return patches_per_side() * patches_per_side(); }
    size_t patch_dim() const { return patch_size * patch_size; }
    size_t seq_len() const { return num_patches() + 1; }  // + class token
    void validate() const;
};

struct ModelConfig {
    std::string family;  // "mlp" | "vit"
    MlpConfig mlp;
    VitConfig vit;

    size_t input_dim() const;
    size_t num_classes() const;
    void validate() const;
};

struct TrainConfig {
    int epochs = 300;
    int batch_size = 128;
    double lr0 = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<int> lr_decay_epochs{60, 120, 160};
    double lr_decay_factor = 0.1;
    uint64_t seed = 1;
    int probe_interval_epochs = 1;
    std::optional<double> adaptive_epsilon;

    void validate() const;
};

struct Experiment {
    ModelConfig model;
    TrainConfig train;
};

// Preset table reproducing the experiment grid; unknown names raise an error
// that lists the valid ones.
Experiment experiment_preset(const std::string& name);
std::vector<std::string> preset_names();

// UTF-8 JSON with snake_case keys mirroring the structs; unknown keys rejected.
Experiment parse_experiment_json(const std::string& text);
std::string experiment_to_json(const Experiment& e);

// model section alone (checkpoint manifests embed it)
ModelConfig parse_model_config_json(const std::string& text);
std::string model_config_to_json(const ModelConfig& m);

}  // namespace cfrg
