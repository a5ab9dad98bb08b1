#include "mtp/model.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mtp/encoding.hpp"

#include "nlohmann/json.hpp"

namespace mtp::model {

// ---------------------------------------------------------------------------
// variants

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::baseline_prognosis: return "baseline_prognosis";
        case Variant::baseline_gcs_bin: return "baseline_gcs_bin";
        case Variant::baseline_gcs_ord: return "baseline_gcs_ord";
        case Variant::baseline_age: return "baseline_age";
        case Variant::mt_bin: return "mt_bin";
        case Variant::mt_ord: return "mt_ord";
    }
    throw std::invalid_argument("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& name) {
    for (Variant v : {Variant::baseline_prognosis, Variant::baseline_gcs_bin,
                      Variant::baseline_gcs_ord, Variant::baseline_age, Variant::mt_bin,
                      Variant::mt_ord})
        if (variant_name(v) == name) return v;
    throw std::invalid_argument("variant_from_name: unknown variant '" + name + "'");
}

bool has_prog_head(Variant v) {
    return v == Variant::baseline_prognosis || v == Variant::mt_bin || v == Variant::mt_ord;
}

bool has_gcs_head(Variant v) {
    return v == Variant::baseline_gcs_bin || v == Variant::baseline_gcs_ord ||
           v == Variant::mt_bin || v == Variant::mt_ord;
}

bool has_age_head(Variant v) {
    return v == Variant::baseline_age || v == Variant::mt_bin || v == Variant::mt_ord;
}

size_t gcs_head_width(Variant v) {
    if (!has_gcs_head(v)) return 0;
    const bool ordinal = v == Variant::baseline_gcs_ord || v == Variant::mt_ord;
    return ordinal ? (size_t)(kGcsNumClasses - 1) : 1;
}

// ---------------------------------------------------------------------------
// configuration

void validate_config(const ModelConfig& cfg) {
    if (cfg.d == 0 || cfg.h == 0 || cfg.w == 0)
        throw std::invalid_argument("model config: zero input extent");
    if (cfg.blocks == 0 || cfg.block_layers == 0 || cfg.growth == 0 || cfg.init_channels == 0)
        throw std::invalid_argument("model config: zero backbone size");
    if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0))
        throw std::invalid_argument("model config: dropout must be in [0,1)");
    if (cfg.lambda_prog < 0.0 || cfg.lambda_gcs < 0.0 || cfg.lambda_age < 0.0)
        throw std::invalid_argument("model config: negative lambda");
    if (has_prog_head(cfg.variant) && cfg.lambda_prog <= 0.0)
        throw std::invalid_argument("model config: lambda_prog must be positive for this variant");
    if (has_gcs_head(cfg.variant) && cfg.lambda_gcs <= 0.0)
        throw std::invalid_argument("model config: lambda_gcs must be positive for this variant");
    if (has_age_head(cfg.variant) && cfg.lambda_age <= 0.0)
        throw std::invalid_argument("model config: lambda_age must be positive for this variant");

    // each transition halves the spatial grid and the channel count; both
    // must divide evenly so eval shapes are exact
    size_t d = cfg.d, h = cfg.h, w = cfg.w;
    size_t c = cfg.init_channels;
    for (size_t b = 0; b < cfg.blocks; ++b) {
        c += cfg.block_layers * cfg.growth;
        if (b + 1 == cfg.blocks) break;
        if (d % 2 != 0 || h % 2 != 0 || w % 2 != 0)
            throw std::invalid_argument(
                "model config: spatial extents must halve evenly at every transition");
        d /= 2;
        h /= 2;
        w /= 2;
        if (c % 2 != 0)
            throw std::invalid_argument(
                "model config: channel count must halve evenly at every transition");
        c /= 2;
    }
}

size_t feature_dim(const ModelConfig& cfg) {
    size_t c = cfg.init_channels;
    for (size_t b = 0; b < cfg.blocks; ++b) {
        c += cfg.block_layers * cfg.growth;
        if (b + 1 < cfg.blocks) c /= 2;
    }
    return c;
}

// ---------------------------------------------------------------------------
// targets

namespace {

Tensor column_tensor(std::span<const int> values) {
    std::vector<double> data(values.begin(), values.end());
    return Tensor::from_data({values.size(), 1}, std::move(data));
}

void check_binary(std::span<const int> values, const std::string& what) {
    for (int v : values)
        if (v != 0 && v != 1)
            throw std::invalid_argument("make_targets: " + what + " must be 0 or 1");
}

}  // namespace

TargetBatch make_targets(Variant variant, std::span<const int> prog_labels,
                         std::span<const int> gcs_classes, std::span<const int> age_bins) {
    TargetBatch out;
    size_t n = 0;
    if (has_prog_head(variant)) n = prog_labels.size();
    else if (has_gcs_head(variant)) n = gcs_classes.size();
    else n = age_bins.size();
    if (n == 0) throw std::invalid_argument("make_targets: empty batch");

    if (has_prog_head(variant)) {
        if (prog_labels.size() != n)
            throw std::invalid_argument("make_targets: prognosis label count mismatch");
        check_binary(prog_labels, "prognosis labels");
        out.prog = column_tensor(prog_labels);
    }
    if (has_gcs_head(variant)) {
        if (gcs_classes.size() != n)
            throw std::invalid_argument("make_targets: gcs class count mismatch");
        const size_t width = gcs_head_width(variant);
        std::vector<double> data(n * width);
        for (size_t i = 0; i < n; ++i) {
            const int cls = gcs_classes[i];
            if (cls < 0 || cls >= kGcsNumClasses)
                throw std::invalid_argument("make_targets: gcs class outside 0..2");
            if (width == 1) {
                data[i] = cls == kGcsNumClasses - 1 ? 1.0 : 0.0;  // severe flag
            } else {
                const auto bits = enc::encode_ordinal(cls, kGcsNumClasses);
                for (size_t j = 0; j < width; ++j) data[i * width + j] = (double)bits[j];
            }
        }
        out.gcs = Tensor::from_data({n, width}, std::move(data));
    }
    if (has_age_head(variant)) {
        if (age_bins.size() != n)
            throw std::invalid_argument("make_targets: age bin count mismatch");
        check_binary(age_bins, "age bins");
        out.age = column_tensor(age_bins);
    }
    return out;
}

// ---------------------------------------------------------------------------
// loss

namespace {

void check_head_pair(const Tensor& logits, const Tensor& target, size_t width,
                     const std::string& head) {
    if (!logits.defined())
        throw std::invalid_argument("combined_loss: missing " + head + " output for active head");
    if (!target.defined())
        throw std::invalid_argument("combined_loss: missing " + head + " target for active head");
    if (logits.rank() != 2 || logits.extent(1) != width)
        throw std::invalid_argument("combined_loss: " + head + " logits must be [N," +
                                    std::to_string(width) + "], got " + logits.shape_str());
    if (target.shape() != logits.shape())
        throw std::invalid_argument("combined_loss: " + head + " target shape " +
                                    target.shape_str() + " does not match logits " +
                                    logits.shape_str());
}

}  // namespace

LossBreakdown combined_loss(Tape& tape, const MultiTaskOutput& output, const TargetBatch& targets,
                            const ModelConfig& cfg) {
    LossBreakdown out;
    std::vector<Tensor> terms;
    std::vector<double> weights;
    if (has_prog_head(cfg.variant)) {
        check_head_pair(output.prog_logit, targets.prog, 1, "prognosis");
        Tensor l = nn::bce_with_logits_mean(tape, output.prog_logit, targets.prog);
        out.l_prog = l.item();
        terms.push_back(l);
        weights.push_back(cfg.lambda_prog);
    }
    if (has_gcs_head(cfg.variant)) {
        // for the ordinal head this is the mean of the per-bit binary
        // cross-entropies over the K-1 encoded bits
        check_head_pair(output.gcs_logits, targets.gcs, gcs_head_width(cfg.variant), "gcs");
        Tensor l = nn::bce_with_logits_mean(tape, output.gcs_logits, targets.gcs);
        out.l_gcs = l.item();
        terms.push_back(l);
        weights.push_back(cfg.lambda_gcs);
    }
    if (has_age_head(cfg.variant)) {
        check_head_pair(output.age_logit, targets.age, 1, "age");
        Tensor l = nn::bce_with_logits_mean(tape, output.age_logit, targets.age);
        out.l_age = l.item();
        terms.push_back(l);
        weights.push_back(cfg.lambda_age);
    }
    out.total = nn::weighted_sum(tape, terms, weights);
    out.l_total = out.total.item();
    return out;
}

// ---------------------------------------------------------------------------
// predictions

Predictions predict(const MultiTaskOutput& output, Variant variant, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("predict: threshold must be in (0,1)");
    Predictions out;
    const auto binary_column = [threshold](const Tensor& logits, const std::string& head) {
        if (!logits.defined() || logits.rank() != 2 || logits.extent(1) != 1)
            throw std::invalid_argument("predict: missing or misshapen " + head + " logits");
        std::vector<int> preds(logits.extent(0));
        for (size_t i = 0; i < preds.size(); ++i)
            preds[i] = nn::sigmoid_value(logits.values()[i]) >= threshold ? 1 : 0;
        return preds;
    };
    if (has_prog_head(variant)) out.prognosis = binary_column(output.prog_logit, "prognosis");
    if (has_age_head(variant)) out.age = binary_column(output.age_logit, "age");
    if (has_gcs_head(variant)) {
        const size_t width = gcs_head_width(variant);
        if (width == 1) {
            out.gcs = binary_column(output.gcs_logits, "gcs");
        } else {
            const Tensor& logits = output.gcs_logits;
            if (!logits.defined() || logits.rank() != 2 || logits.extent(1) != width)
                throw std::invalid_argument("predict: missing or misshapen gcs logits");
            out.gcs.resize(logits.extent(0));
            std::vector<double> probs(width);
            for (size_t i = 0; i < out.gcs.size(); ++i) {
                for (size_t j = 0; j < width; ++j)
                    probs[j] = nn::sigmoid_value(logits.values()[i * width + j]);
                out.gcs[i] = enc::decode_ordinal(probs, threshold);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// model assembly

MultiTaskModel::MultiTaskModel(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    validate_config(cfg);
    size_t c = cfg.init_channels;
    stem_conv_ = nn::Conv3dParams(1, c, 3, rng);
    stem_bn_ = nn::BatchNormParams(c);
    for (size_t b = 0; b < cfg.blocks; ++b) {
        blocks_.emplace_back(c, cfg.growth, cfg.block_layers, rng);
        c += cfg.block_layers * cfg.growth;
        if (b + 1 < cfg.blocks) {
            Transition t;
            t.conv = nn::Conv3dParams(c, c / 2, 1, rng);
            transitions_.push_back(std::move(t));
            c /= 2;
        }
    }
    final_bn_ = nn::BatchNormParams(c);
    // head creation order is fixed (prognosis, gcs, age) so identically
    // seeded variants share bitwise-equal backbone and prognosis-head
    // initializations
    if (has_prog_head(cfg.variant)) head_prog_ = nn::DenseParams(c, 1, rng);
    if (has_gcs_head(cfg.variant)) head_gcs_ = nn::DenseParams(c, gcs_head_width(cfg.variant), rng);
    if (has_age_head(cfg.variant)) head_age_ = nn::DenseParams(c, 1, rng);
    initialized_ = true;
}

MultiTaskOutput MultiTaskModel::forward(Tape& tape, const Tensor& x, bool training, Rng& rng) {
    if (!initialized_) throw std::runtime_error("forward: model parameters are uninitialized");
    if (x.rank() != 5 || x.extent(1) != 1)
        throw std::invalid_argument("forward: input must be [N,1,D,H,W], got " + x.shape_str());
    if (x.extent(0) == 0) throw std::invalid_argument("forward: empty batch");
    if (x.extent(2) != cfg_.d || x.extent(3) != cfg_.h || x.extent(4) != cfg_.w)
        throw std::invalid_argument("forward: input extents " + x.shape_str() +
                                    " do not match the configured volume shape");

    Tensor h = nn::conv3d(tape, x, stem_conv_.weight, stem_conv_.bias, 1, 1);
    h = nn::batch_norm(tape, h, stem_bn_, training);
    h = nn::relu(tape, h);
    block_features_.clear();
    for (size_t b = 0; b < blocks_.size(); ++b) {
        h = nn::dense_block(tape, h, blocks_[b], training);
        if (b < transitions_.size()) {
            h = nn::conv3d(tape, h, transitions_[b].conv.weight, transitions_[b].conv.bias, 1, 0);
            h = nn::avg_pool3d_2(tape, h);
            block_features_.push_back(h);
        }
    }
    h = nn::batch_norm(tape, h, final_bn_, training);
    h = nn::relu(tape, h);
    last_features_ = h;
    block_features_.push_back(h);

    Tensor f = nn::global_avg_pool(tape, h);
    f = nn::dropout(tape, f, cfg_.dropout, training, rng);

    MultiTaskOutput out;
    if (has_prog_head(cfg_.variant))
        out.prog_logit = nn::dense(tape, f, head_prog_.weight, head_prog_.bias);
    if (has_gcs_head(cfg_.variant))
        out.gcs_logits = nn::dense(tape, f, head_gcs_.weight, head_gcs_.bias);
    if (has_age_head(cfg_.variant))
        out.age_logit = nn::dense(tape, f, head_age_.weight, head_age_.bias);
    return out;
}

Tensor MultiTaskModel::block_feature(size_t layer) const {
    if (layer >= block_features_.size())
        throw std::invalid_argument("block_feature: invalid layer id " + std::to_string(layer) +
                                    " (model retains " + std::to_string(block_features_.size()) +
                                    " feature layers)");
    return block_features_[layer];
}

// ---------------------------------------------------------------------------
// parameter traversal

void MultiTaskModel::visit(const Visitor& v) {
    const auto bn = [&v](const std::string& prefix, nn::BatchNormParams& p) {
        v.tensor(prefix + ".gamma", p.gamma);
        v.tensor(prefix + ".beta", p.beta);
        if (v.moments) {
            v.moments(prefix + ".running_mean", p.running_mean);
            v.moments(prefix + ".running_var", p.running_var);
        }
    };
    v.tensor("stem.conv.weight", stem_conv_.weight);
    v.tensor("stem.conv.bias", stem_conv_.bias);
    bn("stem.bn", stem_bn_);
    for (size_t b = 0; b < blocks_.size(); ++b) {
        for (size_t l = 0; l < blocks_[b].layers.size(); ++l) {
            const std::string p = "block" + std::to_string(b) + ".layer" + std::to_string(l);
            bn(p + ".bn", blocks_[b].layers[l].bn);
            v.tensor(p + ".conv.weight", blocks_[b].layers[l].conv.weight);
            v.tensor(p + ".conv.bias", blocks_[b].layers[l].conv.bias);
        }
        if (b < transitions_.size()) {
            const std::string p = "trans" + std::to_string(b);
            v.tensor(p + ".conv.weight", transitions_[b].conv.weight);
            v.tensor(p + ".conv.bias", transitions_[b].conv.bias);
        }
    }
    bn("final.bn", final_bn_);
    if (has_prog_head(cfg_.variant)) {
        v.tensor("head.prog.weight", head_prog_.weight);
        v.tensor("head.prog.bias", head_prog_.bias);
    }
    if (has_gcs_head(cfg_.variant)) {
        v.tensor("head.gcs.weight", head_gcs_.weight);
        v.tensor("head.gcs.bias", head_gcs_.bias);
    }
    if (has_age_head(cfg_.variant)) {
        v.tensor("head.age.weight", head_age_.weight);
        v.tensor("head.age.bias", head_age_.bias);
    }
}

std::vector<Tensor> MultiTaskModel::parameters() {
    if (!initialized_) throw std::runtime_error("parameters: model is uninitialized");
    std::vector<Tensor> out;
    Visitor v;
    v.tensor = [&out](const std::string&, Tensor& t) { out.push_back(t); };
    visit(v);
    return out;
}

std::vector<nn::ParamEntry> MultiTaskModel::state() const {
    if (!initialized_) throw std::runtime_error("state: model is uninitialized");
    std::vector<nn::ParamEntry> out;
    Visitor v;
    v.tensor = [&out](const std::string& name, Tensor& t) {
        out.push_back({name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())});
    };
    v.moments = [&out](const std::string& name, std::vector<double>& m) {
        out.push_back({name, {m.size()}, m});
    };
    const_cast<MultiTaskModel*>(this)->visit(v);  // traversal only reads here
    return out;
}

void MultiTaskModel::load_state(const std::vector<nn::ParamEntry>& entries) {
    if (!initialized_) throw std::runtime_error("load_state: model is uninitialized");
    std::map<std::string, const nn::ParamEntry*> by_name;
    for (const auto& e : entries) {
        if (!by_name.emplace(e.name, &e).second)
            throw std::runtime_error("load_state: duplicate parameter '" + e.name + "'");
    }
    const auto lookup = [&by_name](const std::string& name) -> const nn::ParamEntry& {
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("load_state: missing parameter '" + name + "'");
        return *it->second;
    };
    size_t used = 0;
    Visitor v;
    v.tensor = [&](const std::string& name, Tensor& t) {
        const nn::ParamEntry& e = lookup(name);
        if (e.shape != t.shape())
            throw std::runtime_error("load_state: shape mismatch for '" + name + "'");
        std::copy(e.values.begin(), e.values.end(), t.values().begin());
        ++used;
    };
    v.moments = [&](const std::string& name, std::vector<double>& m) {
        const nn::ParamEntry& e = lookup(name);
        if (e.values.size() != m.size())
            throw std::runtime_error("load_state: shape mismatch for '" + name + "'");
        m = e.values;
        ++used;
    };
    visit(v);
    if (used != entries.size())
        throw std::runtime_error("load_state: checkpoint holds unexpected extra parameters");
}

// ---------------------------------------------------------------------------
// checkpoints

void save_checkpoint(const std::string& path, const MultiTaskModel& model,
                     const CheckpointMeta& meta) {
    if (!model.initialized()) throw std::runtime_error("save_checkpoint: model is uninitialized");
    nn::save_params(path, model.state());

    const ModelConfig& cfg = model.config();
    nlohmann::ordered_json j;
    j["format_version"] = 1;
    j["config"] = {{"variant", variant_name(cfg.variant)},
                   {"lambda_prog", cfg.lambda_prog},
                   {"lambda_gcs", cfg.lambda_gcs},
                   {"lambda_age", cfg.lambda_age},
                   {"blocks", cfg.blocks},
                   {"block_layers", cfg.block_layers},
                   {"growth", cfg.growth},
                   {"init_channels", cfg.init_channels},
                   {"d", cfg.d},
                   {"h", cfg.h},
                   {"w", cfg.w},
                   {"dropout", cfg.dropout}};
    j["meta"] = {{"epoch", meta.epoch}, {"monitor", meta.monitor}, {"value", meta.value}};

    const std::string sidecar = path + ".json";
    std::ofstream out(sidecar, std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + sidecar);
    out << j.dump(2) << "\n";
    if (!out.good()) throw std::runtime_error("save_checkpoint: write failed for " + sidecar);
}

MultiTaskModel load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    const std::string sidecar = path + ".json";
    std::ifstream in(sidecar);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + sidecar);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint: bad sidecar " + sidecar + ": " + e.what());
    }
    try {
        if (j.at("format_version").get<int>() != 1)
            throw std::runtime_error("load_checkpoint: unsupported format version in " + sidecar);
        const auto& c = j.at("config");
        ModelConfig cfg;
        cfg.variant = variant_from_name(c.at("variant").get<std::string>());
        cfg.lambda_prog = c.at("lambda_prog").get<double>();
        cfg.lambda_gcs = c.at("lambda_gcs").get<double>();
        cfg.lambda_age = c.at("lambda_age").get<double>();
        cfg.blocks = c.at("blocks").get<size_t>();
        cfg.block_layers = c.at("block_layers").get<size_t>();
        cfg.growth = c.at("growth").get<size_t>();
        cfg.init_channels = c.at("init_channels").get<size_t>();
        cfg.d = c.at("d").get<size_t>();
        cfg.h = c.at("h").get<size_t>();
        cfg.w = c.at("w").get<size_t>();
        cfg.dropout = c.at("dropout").get<double>();
        if (meta) {
            meta->epoch = j.at("meta").at("epoch").get<int>();
            meta->monitor = j.at("meta").at("monitor").get<std::string>();
            meta->value = j.at("meta").at("value").get<double>();
        }
        Rng init_rng(0);  // placeholder values, overwritten by the snapshot
        MultiTaskModel model(cfg, init_rng);
        model.load_state(nn::load_params(path));
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("load_checkpoint: bad sidecar " + sidecar + ": " + e.what());
    }
}

}  // namespace mtp::model
