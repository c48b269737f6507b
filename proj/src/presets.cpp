#include <json.hpp>

#include <algorithm>
#include <sstream>

#include "cfrg/common.hpp"
#include "cfrg/config.hpp"

namespace cfrg {

using nlohmann::json;

void MlpConfig::validate() const {
    if (num_layers < 2)
        throw std::invalid_argument("mlp: num_layers must be >= 2");
    if (frozen_suffix >= num_layers)
        throw std::invalid_argument("mlp: frozen_suffix must be < num_layers");
    if (input_dim < 2 || hidden_width < 2 || num_classes < 2)
        throw std::invalid_argument("mlp: widths and class count must be >= 2");
}

void VitConfig::validate() const {
    if (model_dim != num_heads * head_dim)
        throw std::invalid_argument(
            "vit: model_dim must equal num_heads * head_dim (" +
            std::to_string(model_dim) + " != " + std::to_string(num_heads) +
            " * " + std::to_string(head_dim) + ")");
    if (patch_size == 0 || image_size % patch_size != 0)
        throw std::invalid_argument("vit: image_size must be divisible by patch_size");
    if (num_blocks < 1) throw std::invalid_argument("vit: need at least one block");
    if (ffn_hidden < 2 || model_dim < 2 || num_classes < 2)
        throw std::invalid_argument("vit: widths and class count must be >= 2");
    for (size_t b : ffn_etf_blocks)
        if (b >= num_blocks)
            throw std::invalid_argument("vit: ffn_etf_blocks entry " +
                                        std::to_string(b) + " out of range");
}

size_t ModelConfig::input_dim() const {
    return family == "mlp" ? mlp.input_dim
                           : vit.image_size * vit.image_size;
}

size_t ModelConfig::num_classes() const {
    return family == "mlp" ? mlp.num_classes : vit.num_classes;
}

void ModelConfig::validate() const {
    if (family == "mlp")
        mlp.validate();
    else if (family == "vit")
        vit.validate();
    else
        throw std::invalid_argument("model family must be \"mlp\" or \"vit\", got \"" +
                                    family + "\"");
}

void TrainConfig::validate() const {
    if (epochs < 1 || batch_size < 1)
        throw std::invalid_argument("train: epochs and batch_size must be >= 1");
    if (lr0 <= 0 || momentum < 0 || weight_decay < 0 || lr_decay_factor <= 0)
        throw std::invalid_argument("train: rates must be positive");
    if (probe_interval_epochs < 1)
        throw std::invalid_argument("train: probe_interval_epochs must be >= 1");
    for (size_t i = 1; i < lr_decay_epochs.size(); ++i)
        if (lr_decay_epochs[i] <= lr_decay_epochs[i - 1])
            throw std::invalid_argument("train: lr_decay_epochs must be strictly increasing");
    if (adaptive_epsilon) {
        if (*adaptive_epsilon <= 0)
            throw std::invalid_argument("train: adaptive_epsilon must be positive");
        if (probe_interval_epochs != 1)
            throw std::invalid_argument(
                "train: adaptive mode checks at the end of every epoch; set probe_interval_epochs to 1");
    }
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

namespace {

TrainConfig paper_schedule() {
    TrainConfig t;  // defaults are the paper schedule
    return t;
}

Experiment mlp_preset(size_t frozen_suffix, std::optional<double> eps) {
    Experiment e;
    e.model.family = "mlp";
    e.model.mlp.frozen_suffix = frozen_suffix;
    e.train = paper_schedule();
    e.train.adaptive_epsilon = eps;
    return e;
}

VitConfig paper_vit(size_t blocks) {
    VitConfig v;
    v.num_blocks = blocks;
    return v;
}

Experiment vit_preset(size_t blocks, bool head_etf, std::set<size_t> etf_blocks) {
    Experiment e;
    e.model.family = "vit";
    e.model.vit = paper_vit(blocks);
    e.model.vit.head_etf = head_etf;
    e.model.vit.ffn_etf_blocks = std::move(etf_blocks);
    e.train = paper_schedule();
    return e;
}

VitConfig desk_vit() {
    VitConfig v;
    v.num_blocks = 2;
    v.num_heads = 4;
    v.head_dim = 32;
    v.model_dim = 128;
    v.ffn_hidden = 256;
    return v;
}

}  // namespace

std::vector<std::string> preset_names() {
    return {
        "baseline-mlp",
        "last-layer-etf",
        "last-two-layers-etf",
        "last-three-layers-etf",
        "adaptive-etf",
        "baseline-vit",
        "vit-head-etf",
        "vit-head-last-block-etf",
        "vit-head-last-two-blocks-etf",
        "etf-transformer",
        "vit-blocks-1",
        "vit-blocks-2",
        "vit-blocks-3",
        "vit-blocks-4",
        "desk-vit-baseline",
        "desk-vit-etf",
    };
}

Experiment experiment_preset(const std::string& name) {
    if (name == "baseline-mlp") return mlp_preset(0, std::nullopt);
    if (name == "last-layer-etf") return mlp_preset(1, std::nullopt);
    if (name == "last-two-layers-etf") return mlp_preset(2, std::nullopt);
    if (name == "last-three-layers-etf") return mlp_preset(3, std::nullopt);
    if (name == "adaptive-etf") return mlp_preset(0, 0.1);

    if (name == "baseline-vit") return vit_preset(3, false, {});
    if (name == "vit-head-etf") return vit_preset(3, true, {});
    if (name == "vit-head-last-block-etf") return vit_preset(3, true, {2});
    if (name == "vit-head-last-two-blocks-etf") return vit_preset(3, true, {1, 2});
    if (name == "etf-transformer") return vit_preset(3, true, {0, 1, 2});

    if (name.rfind("vit-blocks-", 0) == 0 && name.size() == 12 &&
        name[11] >= '1' && name[11] <= '4')
        return vit_preset((size_t)(name[11] - '0'), false, {});

    if (name == "desk-vit-baseline" || name == "desk-vit-etf") {
        Experiment e;
        e.model.family = "vit";
        e.model.vit = desk_vit();
        if (name == "desk-vit-etf") {
            e.model.vit.head_etf = true;
            e.model.vit.ffn_etf_blocks = {0, 1};
        }
        e.train = paper_schedule();
        e.train.epochs = 30;
        e.train.probe_interval_epochs = 5;
        return e;
    }

    std::ostringstream os;
    os << "unknown preset \"" << name << "\"; available:";
    for (const auto& p : preset_names()) os << " " << p;
    throw std::invalid_argument(os.str());
}

// ---------------------------------------------------------------------------
// JSON round trip, unknown keys rejected
// ---------------------------------------------------------------------------

namespace {

void require_keys(const json& j, const std::string& where,
                  const std::vector<std::string>& allowed) {
    if (!j.is_object())
        throw DataError("config: " + where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw DataError("config: unknown key \"" + it.key() + "\" in " +
                            where);
    }
}

template <class T>
void read_to(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

ModelConfig model_from_json(const json& jm) {
    ModelConfig m;
    if (!jm.contains("family"))
        throw DataError("config: model.family is required");
    m.family = jm.at("family").get<std::string>();
    if (m.family == "mlp") {
        require_keys(jm, "model",
                     {"family", "input_dim", "hidden_width", "num_layers",
                      "num_classes", "frozen_suffix"});
        read_to(jm, "input_dim", m.mlp.input_dim);
        read_to(jm, "hidden_width", m.mlp.hidden_width);
        read_to(jm, "num_layers", m.mlp.num_layers);
        read_to(jm, "num_classes", m.mlp.num_classes);
        read_to(jm, "frozen_suffix", m.mlp.frozen_suffix);
    } else if (m.family == "vit") {
        require_keys(jm, "model",
                     {"family", "image_size", "patch_size", "num_blocks",
                      "num_heads", "head_dim", "model_dim", "ffn_hidden",
                      "num_classes", "head_etf", "ffn_etf_blocks"});
        read_to(jm, "image_size", m.vit.image_size);
        read_to(jm, "patch_size", m.vit.patch_size);
        read_to(jm, "num_blocks", m.vit.num_blocks);
        read_to(jm, "num_heads", m.vit.num_heads);
        read_to(jm, "head_dim", m.vit.head_dim);
        read_to(jm, "model_dim", m.vit.model_dim);
        read_to(jm, "ffn_hidden", m.vit.ffn_hidden);
        read_to(jm, "num_classes", m.vit.num_classes);
        read_to(jm, "head_etf", m.vit.head_etf);
        if (jm.contains("ffn_etf_blocks"))
            for (const auto& b : jm.at("ffn_etf_blocks"))
                m.vit.ffn_etf_blocks.insert(b.get<size_t>());
    } else {
        throw DataError("config: model.family must be \"mlp\" or \"vit\"");
    }
    return m;
}

json model_to_json(const ModelConfig& m) {
    json jm;
    jm["family"] = m.family;
    if (m.family == "mlp") {
        jm["input_dim"] = m.mlp.input_dim;
        jm["hidden_width"] = m.mlp.hidden_width;
        jm["num_layers"] = m.mlp.num_layers;
        jm["num_classes"] = m.mlp.num_classes;
        jm["frozen_suffix"] = m.mlp.frozen_suffix;
    } else {
        jm["image_size"] = m.vit.image_size;
        jm["patch_size"] = m.vit.patch_size;
        jm["num_blocks"] = m.vit.num_blocks;
        jm["num_heads"] = m.vit.num_heads;
        jm["head_dim"] = m.vit.head_dim;
        jm["model_dim"] = m.vit.model_dim;
        jm["ffn_hidden"] = m.vit.ffn_hidden;
        jm["num_classes"] = m.vit.num_classes;
        jm["head_etf"] = m.vit.head_etf;
        jm["ffn_etf_blocks"] = m.vit.ffn_etf_blocks;
    }
    return jm;
}

}  // namespace

ModelConfig parse_model_config_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("config: invalid JSON: ") + e.what());
    }
    ModelConfig m = model_from_json(j);
    m.validate();
    return m;
}

std::string model_config_to_json(const ModelConfig& m) {
    return model_to_json(m).dump();
}

Experiment parse_experiment_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("config: invalid JSON: ") + e.what());
    }
    require_keys(j, "top level", {"model", "train"});
    if (!j.contains("model") || !j.contains("train"))
        throw DataError("config: need both \"model\" and \"train\" objects");

    Experiment e;
    e.model = model_from_json(j.at("model"));

    const json& jt = j.at("train");
    require_keys(jt, "train",
                 {"epochs", "batch_size", "lr0", "momentum", "weight_decay",
                  "lr_decay_epochs", "lr_decay_factor", "seed",
                  "probe_interval_epochs", "adaptive_epsilon"});
    read_to(jt, "epochs", e.train.epochs);
    read_to(jt, "batch_size", e.train.batch_size);
    read_to(jt, "lr0", e.train.lr0);
    read_to(jt, "momentum", e.train.momentum);
    read_to(jt, "weight_decay", e.train.weight_decay);
    if (jt.contains("lr_decay_epochs"))
        e.train.lr_decay_epochs =
            jt.at("lr_decay_epochs").get<std::vector<int>>();
    read_to(jt, "lr_decay_factor", e.train.lr_decay_factor);
    read_to(jt, "seed", e.train.seed);
    read_to(jt, "probe_interval_epochs", e.train.probe_interval_epochs);
    if (jt.contains("adaptive_epsilon") && !jt.at("adaptive_epsilon").is_null())
        e.train.adaptive_epsilon = jt.at("adaptive_epsilon").get<double>();

    e.model.validate();
    e.train.validate();
    return e;
}

std::string experiment_to_json(const Experiment& e) {
    json jm = model_to_json(e.model);

    json jt;
    jt["epochs"] = e.train.epochs;
    jt["batch_size"] = e.train.batch_size;
    jt["lr0"] = e.train.lr0;
    jt["momentum"] = e.train.momentum;
    jt["weight_decay"] = e.train.weight_decay;
    jt["lr_decay_epochs"] = e.train.lr_decay_epochs;
    jt["lr_decay_factor"] = e.train.lr_decay_factor;
    jt["seed"] = e.train.seed;
    jt["probe_interval_epochs"] = e.train.probe_interval_epochs;
    if (e.train.adaptive_epsilon)
        jt["adaptive_epsilon"] = *e.train.adaptive_epsilon;
    else
        jt["adaptive_epsilon"] = nullptr;

    json j;
    j["model"] = jm;
    j["train"] = jt;
    return j.dump(2) + "\n";
}

}  // namespace cfrg
