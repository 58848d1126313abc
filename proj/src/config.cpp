#include "patchpad/config.hpp"

#include "patchpad/error.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace patchpad {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc() || p != v.data() + v.size()) throw invalid_argument(key + ": expected an unsigned integer, got '" + v + "'");
    return x;
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw invalid_argument(key + ": expected a number, got '" + v + "'");
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::string fmt(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}
std::string fmt(std::uint64_t x) { return std::to_string(x); }
std::string fmt(bool x) { return x ? "true" : "false"; }

struct Key {
    std::string name;
    std::function<void(PipelineConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

#define PP_SIZE(name, field)                                                                            \
    Key {                                                                                              \
        name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }, \
            [](const PipelineConfig& c) { return fmt(static_cast<std::uint64_t>(c.field)); }           \
    }
#define PP_DOUBLE(name, field)                                                                             \
    Key {                                                                                                 \
        name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
            [](const PipelineConfig& c) { return fmt(c.field); }                                           \
    }
#define PP_BOOL(name, field)                                                                             \
    Key {                                                                                               \
        name, [](PipelineConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
            [](const PipelineConfig& c) { return fmt(c.field); }                                         \
    }

const std::vector<Key>& key_table() {
    static const std::vector<Key> table = [] {
        std::vector<Key> t{
            PP_SIZE("seed", seed),
            PP_SIZE("patch_size", extraction.patch_size),
            PP_DOUBLE("black_threshold", extraction.black_threshold),
            PP_DOUBLE("keep_prob", extraction.keep_prob),
            Key{"train_anon", [](PipelineConfig& c, const std::string&, const std::string& v) { c.train_anon = parse_anon_level(v); },
                [](const PipelineConfig& c) { return std::string(to_string(c.train_anon)); }},
            Key{"eval_anon", [](PipelineConfig& c, const std::string&, const std::string& v) { c.eval_anon = parse_anon_level(v); },
                [](const PipelineConfig& c) { return std::string(to_string(c.eval_anon)); }},
            PP_DOUBLE("dev_fraction", split.dev_fraction),
            PP_DOUBLE("val_fraction", val_fraction),
            Key{"forced_eval_template_versions",
                [](PipelineConfig& c, const std::string& k, const std::string& v) {
                    c.split.forced_eval_template_versions.clear();
                    std::stringstream ss(v);
                    std::string item;
                    while (std::getline(ss, item, ',')) {
                        item = trim(item);
                        if (!item.empty()) c.split.forced_eval_template_versions.insert(static_cast<int>(to_u64(k, item)));
                    }
                },
                [](const PipelineConfig& c) {
                    std::string s;
                    for (int v : c.split.forced_eval_template_versions) s += (s.empty() ? "" : ",") + std::to_string(v);
                    return s;
                }},
            PP_SIZE("stub_dim", embedder.output_dim),
            PP_SIZE("stub_projection_seed", embedder.projection_seed),
            PP_SIZE("augment_variants", augment_variants),
            PP_DOUBLE("augment_prob", augment.prob),
            Key{"head_loss", [](PipelineConfig& c, const std::string&, const std::string& v) { c.head.loss.variant = parse_margin_loss(v); },
                [](const PipelineConfig& c) { return std::string(to_string(c.head.loss.variant)); }},
            Key{"head_weights", [](PipelineConfig& c, const std::string&, const std::string& v) { c.head.weighting = parse_class_weighting(v); },
                [](const PipelineConfig& c) { return std::string(to_string(c.head.weighting)); }},
            PP_DOUBLE("head_margin", head.loss.margin),
            PP_DOUBLE("head_scale", head.loss.scale),
            PP_BOOL("head_cosface_angular", head.loss.cosface_angular),
            PP_BOOL("head_adaface_unscaled_add", head.loss.adaface_unscaled_add),
            PP_BOOL("head_literal_weights", head.literal_initial_weights),
            PP_SIZE("head_embed_dim", head.embed_dim),
            PP_BOOL("head_bias", head.with_bias),
            PP_SIZE("head_epochs", head.max_epochs),
            PP_SIZE("head_batch", head.batch_size),
            PP_SIZE("head_patience", head.patience),
            PP_DOUBLE("head_lr", head.lr_initial),
            PP_DOUBLE("head_lr_final", head.lr_final),
            PP_SIZE("head_warmup_epochs", head.warmup_epochs),
            PP_DOUBLE("head_weight_decay", head.adam.weight_decay),
            PP_SIZE("fusion_epochs", fusion.epochs),
            PP_SIZE("fusion_batch", fusion.batch_size),
            PP_DOUBLE("fusion_lr", fusion.lr_initial),
            PP_DOUBLE("fusion_lr_final", fusion.lr_final),
            PP_SIZE("fusion_warmup_epochs", fusion.warmup_epochs),
            PP_DOUBLE("fusion_weight_decay", fusion.adam.weight_decay),
            PP_SIZE("fusion_context", fusion.context),
            PP_BOOL("fusion_pad_to_context", fusion.pad_to_context),
            PP_BOOL("fusion_pre_norm", fusion.pre_norm),
            PP_DOUBLE("bce_weight_real", fusion.bce.real),
            PP_DOUBLE("bce_weight_attack", fusion.bce.attack),
            PP_BOOL("joint_head", joint_head),
        };
        std::sort(t.begin(), t.end(), [](const Key& a, const Key& b) { return a.name < b.name; });
        return t;
    }();
    return table;
}

#undef PP_SIZE
#undef PP_DOUBLE
#undef PP_BOOL

}  // namespace

void PipelineConfig::set(const std::string& key, const std::string& value) {
    for (const Key& k : key_table()) {
        if (k.name == key) {
            k.set(*this, key, value);
            return;
        }
    }
    throw invalid_argument("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> PipelineConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Key& k : key_table()) out.emplace_back(k.name, k.get(*this));
    return out;
}

std::vector<std::string> PipelineConfig::keys() {
    std::vector<std::string> out;
    for (const Key& k : key_table()) out.push_back(k.name);
    return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> out;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key.empty()) throw invalid_argument("config line " + std::to_string(lineno) + ": empty key");
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str())) base.set(k, v);
    return base;
}

}  // namespace patchpad
