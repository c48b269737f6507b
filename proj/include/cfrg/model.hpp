#pragma once

#include <map>
#include <memory>
#include <string>

#include "cfrg/config.hpp"
#include "cfrg/etf.hpp"
#include "cfrg/matrix.hpp"
#include "cfrg/ops.hpp"
#include "cfrg/tensor.hpp"

namespace cfrg {

enum class LayerMode { Trainable, EtfFrozen };

template <class T>
struct ParamRef {
    std::string id;
    Tensor<T> tensor;
};

// Activations captured at designated probe points, converted to double for
// the metrics path; insertion order follows the architecture.
struct ProbeCapture {
    std::vector<std::pair<std::string, MatrixD>> entries;

    void add(std::string id, MatrixD m) {
        entries.emplace_back(std::move(id), std::move(m));
    }
    const MatrixD* find(const std::string& id) const {
        for (const auto& [k, v] : entries)
            if (k == id) return &v;
        return nullptr;
    }
};

namespace detail {

template <class T>
MatrixD rows_to_matrix(const Tensor<T>& t) {
    MatrixD m(t.dim(0), t.numel() / t.dim(0));
    for (size_t i = 0; i < m.numel(); ++i) m.v[i] = (double)t.data()[i];
    return m;
}

// token 0 of a [B, T, d] tensor as a [B, d] matrix, read without touching the tape
template <class T>
MatrixD token0_matrix(const Tensor<T>& t) {
    const size_t B = t.dim(0), Tq = t.dim(1), d = t.dim(2);
    MatrixD m(B, d);
    for (size_t b = 0; b < B; ++b)
        for (size_t j = 0; j < d; ++j) m.at(b, j) = (double)t.data()[b * Tq * d + j];
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// linear layer with a Trainable | EtfFrozen weight; the bias stays trainable
// in both modes
// ---------------------------------------------------------------------------
template <class T>
struct LinearLayer {
    std::string id;
    size_t d_in = 0;
    size_t d_out = 0;
    Tensor<T> weight;  // [d_out, d_in]
    Tensor<T> bias;    // [d_out]
    LayerMode mode = LayerMode::Trainable;
    EtfLayerSpec etf;  // valid iff mode == EtfFrozen

    static LinearLayer make(std::string id, size_t d_in, size_t d_out,
                            Rng& rng) {
        LinearLayer l;
        l.id = std::move(id);
        l.d_in = d_in;
        l.d_out = d_out;
        const double bound = 1.0 / std::sqrt((double)d_in);
        std::vector<T> w(d_out * d_in), b(d_out);
        for (auto& x : w) x = (T)rng.uniform(-bound, bound);
        for (auto& x : b) x = (T)rng.uniform(-bound, bound);
        l.weight = Tensor<T>::from_data({d_out, d_in}, std::move(w), true);
        l.bias = Tensor<T>::from_data({d_out}, std::move(b), true);
        return l;
    }

    Tensor<T> forward(const Tensor<T>& x) const {
        return add_bias(matmul(x, transpose2d(weight)), bias);
    }

    double weight_frobenius() const {
        double s = 0.0;
        for (T x : weight.data()) s += (double)x * (double)x;
        return std::sqrt(s);
    }

    void freeze_to_etf(double scale) {
        if (mode == LayerMode::EtfFrozen)
            throw std::logic_error("layer " + id + " is already ETF-frozen");
        etf = EtfLayerSpec::make(d_in, d_out, scale);
        const MatrixD w = etf_layer_weight(etf);
        for (size_t i = 0; i < w.numel(); ++i) weight.data()[i] = (T)w.v[i];
        weight.set_requires_grad(false);
        weight.zero_grad();
        mode = LayerMode::EtfFrozen;
    }

    // mid-training freeze: preserve the Frobenius norm of the replaced weight
    void freeze_to_etf_preserving_norm() {
        const double norm = weight_frobenius();
        if (norm < 1e-12)
            throw NumericError("layer " + id +
                               ": cannot norm-match a zero weight");
        freeze_to_etf(norm / std::sqrt((double)etf_frame_count()));
    }

    size_t etf_frame_count() const { return std::min(d_in, d_out); }

    long long trainable_count() const {
        return mode == LayerMode::Trainable
                   ? (long long)(d_out * d_in + d_out)
                   : (long long)d_out;
    }
};

// ---------------------------------------------------------------------------
// model interface shared by the two families
// ---------------------------------------------------------------------------
template <class T>
class Model {
  public:
    virtual ~Model() = default;

    virtual const ModelConfig& config() const = 0;
    const std::string& family() const { return config().family; }
    size_t input_dim() const { return config().input_dim(); }
    size_t num_classes() const { return config().num_classes(); }

    // logits [B, classes]; probes appended to cap when non-null, without
    // perturbing the computation
    virtual Tensor<T> forward(const Tensor<T>& x, RunMode mode,
                              ProbeCapture* cap = nullptr) = 0;

    virtual std::vector<ParamRef<T>> trainable_params() = 0;
    virtual long long trainable_param_count() const = 0;
    virtual std::vector<std::string> param_breakdown() const = 0;

    virtual std::vector<std::string> probe_ids() const = 0;
    virtual std::vector<std::string> freezable_layer_ids() const = 0;
    virtual std::vector<std::string> frozen_layer_ids() const = 0;
    virtual void freeze_layer_to_etf(const std::string& layer_id) = 0;
    // probe feeding a freezable layer ("input" for the first MLP layer;
    // empty when the family does not support input-probe freezing)
    virtual std::string input_probe_of(const std::string& layer_id) const = 0;

    virtual std::vector<LinearLayer<T>*> linear_layers() = 0;
    virtual LinearLayer<T>* find_layer(const std::string& id) = 0;

    // serialization hooks (see checkpoint.hpp)
    struct StateEntry {
        std::string id;
        std::vector<size_t> shape;
        std::string kind;  // "trainable" | "etf_frozen" | "buffer"
        double scale = 0.0;
        std::vector<T>* data = nullptr;
    };
    virtual std::vector<StateEntry> state_entries() = 0;
};

// ---------------------------------------------------------------------------
// 5-layer MLP family: linear -> batchnorm -> relu stacks with a linear head
// ---------------------------------------------------------------------------
template <class T>
class Mlp final : public Model<T> {
  public:
    Mlp(const MlpConfig& cfg, uint64_t seed) {
        cfg.validate();
        cfg_.family = "mlp";
        cfg_.mlp = cfg;
        Rng rng(seed);
        const size_t L = cfg.num_layers;
        for (size_t i = 0; i < L; ++i) {
            const size_t din = i == 0 ? cfg.input_dim : cfg.hidden_width;
            const size_t dout =
                i + 1 == L ? cfg.num_classes : cfg.hidden_width;
            linears_.push_back(LinearLayer<T>::make("fc" + std::to_string(i + 1),
                                                    din, dout, rng));
            if (i + 1 < L) bns_.push_back(BatchNormState<T>::make(dout));
        }
        for (size_t i = L - cfg.frozen_suffix; i < L; ++i)
            linears_[i].freeze_to_etf(1.0);
    }

    const ModelConfig& config() const override { return cfg_; }

    Tensor<T> forward(const Tensor<T>& x, RunMode mode,
                      ProbeCapture* cap = nullptr) override {
        if (x.ndim() != 2 || x.dim(1) != cfg_.mlp.input_dim)
            throw std::invalid_argument("mlp: input must be [batch x " +
                                        std::to_string(cfg_.mlp.input_dim) +
                                        "], got " + shape_str(x.shape()));
        Tensor<T> h = x;
        for (size_t i = 0; i < linears_.size(); ++i) {
            h = linears_[i].forward(h);
            if (i + 1 < linears_.size())
                h = relu(batchnorm(h, bns_[i], mode));
            if (cap)
                cap->add("l" + std::to_string(i + 1),
                         detail::rows_to_matrix(h));
        }
        return h;
    }

    std::vector<ParamRef<T>> trainable_params() override {
        std::vector<ParamRef<T>> out;
        for (size_t i = 0; i < linears_.size(); ++i) {
            auto& l = linears_[i];
            if (l.mode == LayerMode::Trainable)
                out.push_back({l.id + ".weight", l.weight});
            out.push_back({l.id + ".bias", l.bias});
            if (i < bns_.size()) {
                out.push_back({"bn" + std::to_string(i + 1) + ".gamma",
                               bns_[i].gamma});
                out.push_back({"bn" + std::to_string(i + 1) + ".beta",
                               bns_[i].beta});
            }
        }
        return out;
    }

    long long trainable_param_count() const override {
        long long n = 0;
        for (const auto& l : linears_) n += l.trainable_count();
        for (const auto& bn : bns_) n += (long long)(2 * bn.features());
        return n;
    }

    std::vector<std::string> param_breakdown() const override {
        std::vector<std::string> out;
        for (const auto& l : linears_) {
            std::string line = l.id + ": " + std::to_string(l.d_out) + "x" +
                               std::to_string(l.d_in);
            line += l.mode == LayerMode::Trainable
                        ? " weight + bias -> " +
                              std::to_string(l.trainable_count())
                        : " [etf-frozen] bias only -> " +
                              std::to_string(l.trainable_count());
            out.push_back(line);
        }
        for (size_t i = 0; i < bns_.size(); ++i)
            out.push_back("bn" + std::to_string(i + 1) + ": affine -> " +
                          std::to_string(2 * bns_[i].features()));
        return out;
    }

    std::vector<std::string> probe_ids() const override {
        std::vector<std::string> out;
        for (size_t i = 0; i < linears_.size(); ++i)
            out.push_back("l" + std::to_string(i + 1));
        return out;
    }

    std::vector<std::string> freezable_layer_ids() const override {
        std::vector<std::string> out;
        for (const auto& l : linears_) out.push_back(l.id);
        return out;
    }

    std::vector<std::string> frozen_layer_ids() const override {
        std::vector<std::string> out;
        for (const auto& l : linears_)
            if (l.mode == LayerMode::EtfFrozen) out.push_back(l.id);
        return out;
    }

    void freeze_layer_to_etf(const std::string& layer_id) override {
        LinearLayer<T>* l = find_layer(layer_id);
        if (!l)
            throw std::invalid_argument("mlp: no freezable layer named \"" +
                                        layer_id + "\"");
        l->freeze_to_etf_preserving_norm();
    }

    std::string input_probe_of(const std::string& layer_id) const override {
        for (size_t i = 0; i < linears_.size(); ++i)
            if (linears_[i].id == layer_id)
                return i == 0 ? "input" : "l" + std::to_string(i);
        throw std::invalid_argument("mlp: unknown layer \"" + layer_id + "\"");
    }

    std::vector<LinearLayer<T>*> linear_layers() override {
        std::vector<LinearLayer<T>*> out;
        for (auto& l : linears_) out.push_back(&l);
        return out;
    }

    LinearLayer<T>* find_layer(const std::string& id) override {
        for (auto& l : linears_)
            if (l.id == id) return &l;
        return nullptr;
    }

    std::vector<typename Model<T>::StateEntry> state_entries() override {
        std::vector<typename Model<T>::StateEntry> out;
        auto weight_kind = [](const LinearLayer<T>& l) {
            return l.mode == LayerMode::Trainable ? "trainable" : "etf_frozen";
        };
        for (size_t i = 0; i < linears_.size(); ++i) {
            auto& l = linears_[i];
            out.push_back({l.id + ".weight", l.weight.shape(), weight_kind(l),
                           l.mode == LayerMode::EtfFrozen ? l.etf.scale : 0.0,
                           &l.weight.data()});
            out.push_back({l.id + ".bias", l.bias.shape(), "trainable", 0.0,
                           &l.bias.data()});
            if (i < bns_.size()) {
                const std::string bn = "bn" + std::to_string(i + 1);
                out.push_back({bn + ".gamma", bns_[i].gamma.shape(),
                               "trainable", 0.0, &bns_[i].gamma.data()});
                out.push_back({bn + ".beta", bns_[i].beta.shape(), "trainable",
                               0.0, &bns_[i].beta.data()});
                out.push_back({bn + ".running_mean",
                               {bns_[i].features()},
                               "buffer",
                               0.0,
                               &bns_[i].running_mean});
                out.push_back({bn + ".running_var",
                               {bns_[i].features()},
                               "buffer",
                               0.0,
                               &bns_[i].running_var});
            }
        }
        return out;
    }

  private:
    ModelConfig cfg_;
    std::vector<LinearLayer<T>> linears_;
    std::vector<BatchNormState<T>> bns_;
};

// ---------------------------------------------------------------------------
// small pre-norm ViT: patch embedding, class token, learned positional
// embeddings, MHSA + gelu feedforward blocks, linear head
// ---------------------------------------------------------------------------
template <class T>
class Vit final : public Model<T> {
  public:
    Vit(const VitConfig& cfg, uint64_t seed) {
        cfg.validate();
        cfg_.family = "vit";
        cfg_.vit = cfg;
        Rng rng(seed);

        patch_embed_ = LinearLayer<T>::make("patch_embed", cfg.patch_dim(),
                                            cfg.model_dim, rng);
        {
            std::vector<T> c(cfg.model_dim), p(cfg.seq_len() * cfg.model_dim);
            for (auto& x : c) x = (T)(0.02 * rng.gauss());
            for (auto& x : p) x = (T)(0.02 * rng.gauss());
            cls_ = Tensor<T>::from_data({cfg.model_dim}, std::move(c), true);
            pos_ = Tensor<T>::from_data({cfg.seq_len(), cfg.model_dim},
                                        std::move(p), true);
        }
        for (size_t b = 0; b < cfg.num_blocks; ++b) {
            const std::string pre = "b" + std::to_string(b + 1) + ".";
            Block blk;
            blk.ln1_gamma = ones_param(cfg.model_dim);
            blk.ln1_beta = zeros_param(cfg.model_dim);
            blk.wq = LinearLayer<T>::make(pre + "wq", cfg.model_dim,
                                          cfg.model_dim, rng);
            blk.wk = LinearLayer<T>::make(pre + "wk", cfg.model_dim,
                                          cfg.model_dim, rng);
            blk.wv = LinearLayer<T>::make(pre + "wv", cfg.model_dim,
                                          cfg.model_dim, rng);
            blk.wo = LinearLayer<T>::make(pre + "wo", cfg.model_dim,
                                          cfg.model_dim, rng);
            blk.ln2_gamma = ones_param(cfg.model_dim);
            blk.ln2_beta = zeros_param(cfg.model_dim);
            blk.fc1 = LinearLayer<T>::make(pre + "fc1", cfg.model_dim,
                                           cfg.ffn_hidden, rng);
            blk.fc2 = LinearLayer<T>::make(pre + "fc2", cfg.ffn_hidden,
                                           cfg.model_dim, rng);
            if (cfg.ffn_etf_blocks.count(b)) {
                blk.fc1.freeze_to_etf(1.0);
                blk.fc2.freeze_to_etf(1.0);
            }
            blocks_.push_back(std::move(blk));
        }
        lnf_gamma_ = ones_param(cfg.model_dim);
        lnf_beta_ = zeros_param(cfg.model_dim);
        head_ = LinearLayer<T>::make("head", cfg.model_dim, cfg.num_classes,
                                     rng);
        if (cfg.head_etf) head_.freeze_to_etf(1.0);
    }

    const ModelConfig& config() const override { return cfg_; }

    Tensor<T> forward(const Tensor<T>& x, RunMode mode,
                      ProbeCapture* cap = nullptr) override {
        (void)mode;  // no dropout / batch statistics in this family
        const VitConfig& c = cfg_.vit;
        if (x.ndim() != 2 || x.dim(1) != c.image_size * c.image_size)
            throw std::invalid_argument("vit: input must be [batch x " +
                                        std::to_string(c.image_size *
                                                       c.image_size) +
                                        "], got " + shape_str(x.shape()));
        const size_t B = x.dim(0), P = c.num_patches(), d = c.model_dim;
        const size_t Tq = c.seq_len();

        Tensor<T> patches = patchify(x);
        Tensor<T> tok = reshape(patch_embed_.forward(patches), {B, P, d});
        tok = prepend_token(tok, cls_);
        tok = add_bcast0(tok, pos_);
        if (cap) cap->add("embed", detail::token0_matrix(tok));

        const size_t H = c.num_heads, dh = c.head_dim;
        for (size_t bi = 0; bi < blocks_.size(); ++bi) {
            Block& blk = blocks_[bi];
            const std::string pre = "b" + std::to_string(bi + 1) + ".";

            Tensor<T> r1 = layernorm(tok, blk.ln1_gamma, blk.ln1_beta);
            Tensor<T> flat = reshape(r1, {B * Tq, d});
            auto heads = [&](const LinearLayer<T>& w) {
                return permute_0213(reshape(w.forward(flat), {B, Tq, H, dh}));
            };
            Tensor<T> qh = heads(blk.wq);
            Tensor<T> kh = heads(blk.wk);
            Tensor<T> vh = heads(blk.wv);
            Tensor<T> scores =
                scale(bmm(qh, transpose_last2(kh)),
                      (T)(1.0 / std::sqrt((double)dh)));
            Tensor<T> ctx = bmm(softmax_lastdim(scores), vh);
            Tensor<T> merged = reshape(permute_0213(ctx), {B * Tq, d});
            tok = add(tok, reshape(blk.wo.forward(merged), {B, Tq, d}));

            Tensor<T> r2 = layernorm(tok, blk.ln2_gamma, blk.ln2_beta);
            Tensor<T> f =
                blk.fc2.forward(gelu(blk.fc1.forward(reshape(r2, {B * Tq, d}))));
            Tensor<T> f3 = reshape(f, {B, Tq, d});
            if (cap) cap->add(pre + "ffn_pre", detail::token0_matrix(f3));
            tok = add(tok, f3);
            if (cap) cap->add(pre + "ffn_post", detail::token0_matrix(tok));
        }

        Tensor<T> hf = layernorm(tok, lnf_gamma_, lnf_beta_);
        if (cap) cap->add("head_in", detail::token0_matrix(hf));
        return head_.forward(select_token(hf, 0));
    }

    std::vector<ParamRef<T>> trainable_params() override {
        std::vector<ParamRef<T>> out;
        auto add_linear = [&](LinearLayer<T>& l) {
            if (l.mode == LayerMode::Trainable)
                out.push_back({l.id + ".weight", l.weight});
            out.push_back({l.id + ".bias", l.bias});
        };
        add_linear(patch_embed_);
        out.push_back({"cls_token", cls_});
        out.push_back({"pos_embed", pos_});
        for (size_t b = 0; b < blocks_.size(); ++b) {
            const std::string pre = "b" + std::to_string(b + 1) + ".";
            auto& blk = blocks_[b];
            out.push_back({pre + "ln1.gamma", blk.ln1_gamma});
            out.push_back({pre + "ln1.beta", blk.ln1_beta});
            add_linear(blk.wq);
            add_linear(blk.wk);
            add_linear(blk.wv);
            add_linear(blk.wo);
            out.push_back({pre + "ln2.gamma", blk.ln2_gamma});
            out.push_back({pre + "ln2.beta", blk.ln2_beta});
            add_linear(blk.fc1);
            add_linear(blk.fc2);
        }
        out.push_back({"final_ln.gamma", lnf_gamma_});
        out.push_back({"final_ln.beta", lnf_beta_});
        add_linear(head_);
        return out;
    }

    long long trainable_param_count() const override {
        long long n = 0;
        n += patch_embed_.trainable_count();
        n += (long long)cls_.numel() + (long long)pos_.numel();
        for (const auto& blk : blocks_) {
            n += 4 * (long long)cfg_.vit.model_dim;  // two layernorm affines
            n += blk.wq.trainable_count() + blk.wk.trainable_count() +
                 blk.wv.trainable_count() + blk.wo.trainable_count();
            n += blk.fc1.trainable_count() + blk.fc2.trainable_count();
        }
        n += 2 * (long long)cfg_.vit.model_dim;  // final layernorm
        n += head_.trainable_count();
        return n;
    }

    std::vector<std::string> param_breakdown() const override {
        std::vector<std::string> out;
        auto line = [&](const LinearLayer<T>& l) {
            out.push_back(l.id + ": " + std::to_string(l.d_out) + "x" +
                          std::to_string(l.d_in) +
                          (l.mode == LayerMode::Trainable
                               ? " weight + bias -> "
                               : " [etf-frozen] bias only -> ") +
                          std::to_string(l.trainable_count()));
        };
        line(patch_embed_);
        out.push_back("cls_token + pos_embed -> " +
                      std::to_string(cls_.numel() + pos_.numel()));
        for (size_t b = 0; b < blocks_.size(); ++b) {
            const auto& blk = blocks_[b];
            line(blk.wq);
            line(blk.wk);
            line(blk.wv);
            line(blk.wo);
            line(blk.fc1);
            line(blk.fc2);
            out.push_back("b" + std::to_string(b + 1) + " layernorms -> " +
                          std::to_string(4 * cfg_.vit.model_dim));
        }
        out.push_back("final layernorm -> " +
                      std::to_string(2 * cfg_.vit.model_dim));
        line(head_);
        return out;
    }

    std::vector<std::string> probe_ids() const override {
        std::vector<std::string> out{"embed"};
        for (size_t b = 0; b < blocks_.size(); ++b) {
            out.push_back("b" + std::to_string(b + 1) + ".ffn_pre");
            out.push_back("b" + std::to_string(b + 1) + ".ffn_post");
        }
        out.push_back("head_in");
        return out;
    }

    std::vector<std::string> freezable_layer_ids() const override {
        std::vector<std::string> out;
        for (size_t b = 0; b < blocks_.size(); ++b) {
            out.push_back("b" + std::to_string(b + 1) + ".fc1");
            out.push_back("b" + std::to_string(b + 1) + ".fc2");
        }
        out.push_back("head");
        return out;
    }

    std::vector<std::string> frozen_layer_ids() const override {
        std::vector<std::string> out;
        for (auto* l : const_cast<Vit*>(this)->linear_layers())
            if (l->mode == LayerMode::EtfFrozen) out.push_back(l->id);
        return out;
    }

    void freeze_layer_to_etf(const std::string& layer_id) override {
        for (const std::string& id : freezable_layer_ids())
            if (id == layer_id) {
                find_layer(layer_id)->freeze_to_etf_preserving_norm();
                return;
            }
        throw std::invalid_argument(
            "vit: layer \"" + layer_id +
            "\" is not freezable (only block FC layers and the head are)");
    }

    std::string input_probe_of(const std::string&) const override {
        return "";  // adaptive freezing is an MLP-family feature
    }

    std::vector<LinearLayer<T>*> linear_layers() override {
        std::vector<LinearLayer<T>*> out{&patch_embed_};
        for (auto& blk : blocks_) {
            out.push_back(&blk.wq);
            out.push_back(&blk.wk);
            out.push_back(&blk.wv);
            out.push_back(&blk.wo);
            out.push_back(&blk.fc1);
            out.push_back(&blk.fc2);
        }
        out.push_back(&head_);
        return out;
    }

    LinearLayer<T>* find_layer(const std::string& id) override {
        for (auto* l : linear_layers())
            if (l->id == id) return l;
        return nullptr;
    }

    std::vector<typename Model<T>::StateEntry> state_entries() override {
        std::vector<typename Model<T>::StateEntry> out;
        auto add_linear = [&](LinearLayer<T>& l) {
            out.push_back({l.id + ".weight", l.weight.shape(),
                           l.mode == LayerMode::Trainable ? "trainable"
                                                          : "etf_frozen",
                           l.mode == LayerMode::EtfFrozen ? l.etf.scale : 0.0,
                           &l.weight.data()});
            out.push_back({l.id + ".bias", l.bias.shape(), "trainable", 0.0,
                           &l.bias.data()});
        };
        auto add_plain = [&](const std::string& id, Tensor<T>& t) {
            out.push_back({id, t.shape(), "trainable", 0.0, &t.data()});
        };
        add_linear(patch_embed_);
        add_plain("cls_token", cls_);
        add_plain("pos_embed", pos_);
        for (size_t b = 0; b < blocks_.size(); ++b) {
            const std::string pre = "b" + std::to_string(b + 1) + ".";
            auto& blk = blocks_[b];
            add_plain(pre + "ln1.gamma", blk.ln1_gamma);
            add_plain(pre + "ln1.beta", blk.ln1_beta);
            add_linear(blk.wq);
            add_linear(blk.wk);
            add_linear(blk.wv);
            add_linear(blk.wo);
            add_plain(pre + "ln2.gamma", blk.ln2_gamma);
            add_plain(pre + "ln2.beta", blk.ln2_beta);
            add_linear(blk.fc1);
            add_linear(blk.fc2);
        }
        add_plain("final_ln.gamma", lnf_gamma_);
        add_plain("final_ln.beta", lnf_beta_);
        add_linear(head_);
        return out;
    }

  private:
    struct Block {
        Tensor<T> ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
        LinearLayer<T> wq, wk, wv, wo, fc1, fc2;
    };

    static Tensor<T> ones_param(size_t n) {
        return Tensor<T>::from_data({n}, std::vector<T>(n, T(1)), true);
    }
    static Tensor<T> zeros_param(size_t n) {
        return Tensor<T>::zeros({n}, true);
    }

    // [B, image^2] -> [B * patches, patch_dim], row-major over the patch grid;
    // pure data rearrangement of the non-tracked input
    Tensor<T> patchify(const Tensor<T>& x) const {
        const VitConfig& c = cfg_.vit;
        const size_t B = x.dim(0), side = c.image_size, ps = c.patch_size;
        const size_t grid = c.patches_per_side();
        std::vector<T> out(B * c.num_patches() * c.patch_dim());
        size_t w = 0;
        for (size_t b = 0; b < B; ++b) {
            const T* img = x.data().data() + b * side * side;
            for (size_t gy = 0; gy < grid; ++gy)
                for (size_t gx = 0; gx < grid; ++gx)
                    for (size_t py = 0; py < ps; ++py)
                        for (size_t px = 0; px < ps; ++px)
                            out[w++] = img[(gy * ps + py) * side + gx * ps + px];
        }
        return Tensor<T>::from_data({B * c.num_patches(), c.patch_dim()},
                                    std::move(out), false);
    }

    ModelConfig cfg_;
    LinearLayer<T> patch_embed_;
    Tensor<T> cls_, pos_;
    std::vector<Block> blocks_;
    Tensor<T> lnf_gamma_, lnf_beta_;
    LinearLayer<T> head_;
};

template <class T>
std::unique_ptr<Mlp<T>> build_mlp(const MlpConfig& cfg, uint64_t seed) {
    return std::make_unique<Mlp<T>>(cfg, seed);
}

template <class T>
std::unique_ptr<Vit<T>> build_vit(const VitConfig& cfg, uint64_t seed) {
    return std::make_unique<Vit<T>>(cfg, seed);
}

template <class T>
std::unique_ptr<Model<T>> build_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    if (cfg.family == "mlp")
        return std::make_unique<Mlp<T>>(cfg.mlp, seed);
    return std::make_unique<Vit<T>>(cfg.vit, seed);
}

}  // namespace cfrg
