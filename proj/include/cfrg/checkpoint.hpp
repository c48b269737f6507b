#pragma once

// Checkpoint layout:
//   line 1: "CFRG1"
//   line 2: decimal byte count of the JSON manifest
//   manifest bytes, one trailing newline
//   parameter payload: little-endian float32 in manifest order
//
// The manifest records the model config plus every state entry (id, shape,
// kind, ETF scale), so a checkpoint is self-contained: frozen weights are
// serialized like everything else.

#include <json.hpp>

#include <cstring>
#include <fstream>

#include "cfrg/model.hpp"

namespace cfrg {

inline constexpr const char* kCheckpointMagic = "CFRG1";

template <class T>
void save_checkpoint(Model<T>& model, const std::string& path) {
    nlohmann::json manifest;
    manifest["format"] = kCheckpointMagic;
    manifest["model"] = nlohmann::json::parse(model_config_to_json(model.config()));

    auto entries = model.state_entries();
    nlohmann::json params = nlohmann::json::array();
    size_t total = 0;
    for (const auto& e : entries) {
        nlohmann::json p;
        p["id"] = e.id;
        p["shape"] = e.shape;
        p["kind"] = e.kind;
        if (e.kind == "etf_frozen") p["scale"] = e.scale;
        params.push_back(std::move(p));
        total += e.data->size();
    }
    manifest["params"] = std::move(params);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint to " + path);
    const std::string mtext = manifest.dump();
    f << kCheckpointMagic << "\n" << mtext.size() << "\n" << mtext << "\n";

    std::string payload;
    payload.reserve(total * 4);
    for (const auto& e : entries)
        for (const T v : *e.data) {
            const float fv = (float)v;
            uint32_t u;
            std::memcpy(&u, &fv, 4);
            payload.push_back((char)(u & 0xff));
            payload.push_back((char)((u >> 8) & 0xff));
            payload.push_back((char)((u >> 16) & 0xff));
            payload.push_back((char)((u >> 24) & 0xff));
        }
    f.write(payload.data(), (std::streamsize)payload.size());
    if (!f) throw DataError("short write to " + path);
}

template <class T>
std::unique_ptr<Model<T>> load_checkpoint(const std::string& path,
                                          uint64_t seed = 0) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint " + path);

    std::string magic, len_line;
    if (!std::getline(f, magic) || magic != kCheckpointMagic)
        throw DataError("checkpoint " + path + ": bad magic (expected " +
                        std::string(kCheckpointMagic) + ")");
    if (!std::getline(f, len_line))
        throw DataError("checkpoint " + path + ": missing manifest length");
    size_t mlen = 0;
    try {
        mlen = (size_t)std::stoull(len_line);
    } catch (...) {
        throw DataError("checkpoint " + path + ": bad manifest length");
    }
    std::string mtext(mlen, '\0');
    f.read(mtext.data(), (std::streamsize)mlen);
    if ((size_t)f.gcount() != mlen)
        throw DataError("checkpoint " + path + ": truncated manifest");
    f.get();  // trailing newline

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(mtext);
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint " + path + ": manifest parse error: " +
                        e.what());
    }

    ModelConfig cfg = parse_model_config_json(manifest.at("model").dump());
    std::unique_ptr<Model<T>> model = build_model<T>(cfg, seed);

    // freeze layers the manifest marks frozen but the config does not cover
    // (adaptive freezes that happened mid-training)
    for (const auto& p : manifest.at("params")) {
        if (p.at("kind").get<std::string>() != "etf_frozen") continue;
        const std::string id = p.at("id").get<std::string>();
        if (id.size() < 8 || id.substr(id.size() - 7) != ".weight")
            throw DataError("checkpoint " + path + ": frozen entry " + id +
                            " is not a layer weight");
        const std::string layer_id = id.substr(0, id.size() - 7);
        LinearLayer<T>* l = model->find_layer(layer_id);
        if (!l)
            throw DataError("checkpoint " + path + ": unknown layer " +
                            layer_id);
        if (l->mode != LayerMode::EtfFrozen)
            l->freeze_to_etf(p.at("scale").get<double>());
    }

    auto entries = model->state_entries();
    const auto& params = manifest.at("params");
    if (params.size() != entries.size())
        throw DataError("checkpoint " + path + ": manifest lists " +
                        std::to_string(params.size()) + " entries, model has " +
                        std::to_string(entries.size()));

    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& p = params[i];
        auto& e = entries[i];
        if (p.at("id").get<std::string>() != e.id)
            throw DataError("checkpoint " + path + ": entry " +
                            std::to_string(i) + " is " +
                            p.at("id").get<std::string>() + ", model expects " +
                            e.id + " (architecture mismatch)");
        if (p.at("shape").get<std::vector<size_t>>() != e.shape)
            throw DataError("checkpoint " + path + ": shape mismatch for " +
                            e.id);
        std::string bytes(e.data->size() * 4, '\0');
        f.read(bytes.data(), (std::streamsize)bytes.size());
        if ((size_t)f.gcount() != bytes.size())
            throw DataError("checkpoint " + path + ": truncated payload at " +
                            e.id);
        for (size_t k = 0; k < e.data->size(); ++k) {
            const uint32_t u = (uint32_t)(uint8_t)bytes[k * 4] |
                               ((uint32_t)(uint8_t)bytes[k * 4 + 1] << 8) |
                               ((uint32_t)(uint8_t)bytes[k * 4 + 2] << 16) |
                               ((uint32_t)(uint8_t)bytes[k * 4 + 3] << 24);
            float fv;
            std::memcpy(&fv, &u, 4);
            (*e.data)[k] = (T)fv;
        }
    }
    return model;
}

}  // namespace cfrg
