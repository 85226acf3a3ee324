#include "attnseg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "attnseg/errors.hpp"

namespace attnseg {

using nlohmann::json;

namespace {

void read_value(const json& v, const std::string& path, int& out) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX) throw ConfigError(path + ": integer out of range");
    out = static_cast<int>(x);
}

void read_value(const json& v, const std::string& path, std::uint64_t& out) {
    if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
    out = v.get<std::uint64_t>();
}

void read_value(const json& v, const std::string& path, double& out) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    out = v.get<double>();
}

void read_value(const json& v, const std::string& path, bool& out) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
    out = v.get<bool>();
}

void read_value(const json& v, const std::string& path, std::string& out) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string");
    out = v.get<std::string>();
}

// Reads known keys of one JSON object and rejects the rest.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    template <class V>
    void get(const std::string& key, V& out) {
        seen_.insert(key);
        if (j_.contains(key)) read_value(j_.at(key), path_ + "." + key, out);
    }

    const json* child(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const std::string& key) const { return path_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError(path_ + "." + item.key() + ": unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class E, class Parse>
void get_enum(Section& s, const std::string& key, E& out, Parse parse) {
    std::string text;
    s.get(key, text);
    if (text.empty()) return;
    try {
        out = parse(text);
    } catch (const ConfigError& e) {
        throw ConfigError(s.path(key) + ": " + e.what());
    }
}

ModelConfig model_from_json(const json& j, const std::string& path) {
    ModelConfig m;
    Section s(j, path);
    s.get("in_channels", m.in_channels);
    s.get("num_classes", m.num_classes);
    s.get("depth", m.depth);
    s.get("base_width", m.base_width);
    s.get("use_simam", m.use_simam);
    s.get("use_cbam", m.use_cbam);
    get_enum(s, "attention_site", m.attention_site, parse_attention_site);
    get_enum(s, "upsample_mode", m.upsample_mode, parse_upsample_mode);
    s.get("cbam_r", m.cbam_r);
    s.get("sam_kernel", m.sam_kernel);
    s.get("simam_lambda", m.simam_lambda);
    s.get("seed", m.seed);
    s.finish();
    return m;
}

json model_to_json(const ModelConfig& m) {
    return json{{"in_channels", m.in_channels},
                {"num_classes", m.num_classes},
                {"depth", m.depth},
                {"base_width", m.base_width},
                {"use_simam", m.use_simam},
                {"use_cbam", m.use_cbam},
                {"attention_site", to_string(m.attention_site)},
                {"upsample_mode", to_string(m.upsample_mode)},
                {"cbam_r", m.cbam_r},
                {"sam_kernel", m.sam_kernel},
                {"simam_lambda", m.simam_lambda},
                {"seed", m.seed}};
}

ClassLegend legend_from_json(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError(path + ": expected an array of {id, name, rgb}");
    std::vector<LegendEntry> entries;
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string ep = fmt::format("{}[{}]", path, i);
        Section s(j[i], ep);
        LegendEntry e;
        s.get("id", e.class_id);
        s.get("name", e.name);
        const json* rgb = s.child("rgb");
        s.finish();
        if (rgb == nullptr || !rgb->is_array() || rgb->size() != 3)
            throw ConfigError(ep + ".rgb: expected [r, g, b]");
        for (int c = 0; c < 3; ++c) {
            int v = 0;
            read_value((*rgb)[c], fmt::format("{}.rgb[{}]", ep, c), v);
            if (v < 0 || v > 255) throw ConfigError(fmt::format("{}.rgb[{}]: outside 0..255", ep, c));
            e.rgb[c] = static_cast<std::uint8_t>(v);
        }
        entries.push_back(std::move(e));
    }
    try {
        return ClassLegend(std::move(entries));
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

json legend_to_json(const ClassLegend& legend) {
    json out = json::array();
    for (const auto& e : legend.entries())
        out.push_back({{"id", e.class_id}, {"name", e.name}, {"rgb", {e.rgb[0], e.rgb[1], e.rgb[2]}}});
    return out;
}

json parse_json(std::string_view text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(what + ": invalid JSON: " + e.what());
    }
}

}  // namespace

void RunConfig::validate() const {
    train.validate();
    if (legend.size() != train.model.num_classes)
        throw ConfigError(fmt::format("config.legend: {} entries but model.num_classes is {}",
                                      legend.size(), train.model.num_classes));
    if (data.tiles_dir.empty()) throw ConfigError("config.data.tiles_dir: must not be empty");
    if (data.manifest.empty()) throw ConfigError("config.data.manifest: must not be empty");
}

RunConfig parse_run_config(std::string_view json_text) {
    const json j = parse_json(json_text, "config");
    RunConfig cfg;
    Section top(j, "config");
    if (const json* d = top.child("data")) {
        Section s(*d, "config.data");
        s.get("root", cfg.data.root);
        s.get("manifest", cfg.data.manifest);
        s.get("tiles_dir", cfg.data.tiles_dir);
        s.finish();
    }
    if (const json* m = top.child("model")) cfg.train.model = model_from_json(*m, "config.model");
    if (const json* t = top.child("train")) {
        Section s(*t, "config.train");
        s.get("epochs", cfg.train.epochs);
        s.get("batch", cfg.train.batch);
        s.get("lr", cfg.train.lr);
        s.get("adam_beta1", cfg.train.adam_beta1);
        s.get("adam_beta2", cfg.train.adam_beta2);
        s.get("adam_eps", cfg.train.adam_eps);
        s.get("seed", cfg.train.seed);
        if (const json* w = s.child("class_weights"); w != nullptr && !w->is_null()) {
            if (!w->is_array()) throw ConfigError("config.train.class_weights: expected an array");
            std::vector<double> weights(w->size());
            for (std::size_t i = 0; i < w->size(); ++i)
                read_value((*w)[i], fmt::format("config.train.class_weights[{}]", i), weights[i]);
            cfg.train.class_weights = std::move(weights);
        }
        s.finish();
    }
    if (const json* l = top.child("legend")) cfg.legend = legend_from_json(*l, "config.legend");
    top.get("output_dir", cfg.output_dir);
    top.finish();
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        throw ConfigError(msg.rfind("config.", 0) == 0 ? msg : "config." + msg);
    }
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingDataError("config file not found: " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_json(const RunConfig& cfg) {
    json train{{"epochs", cfg.train.epochs},
               {"batch", cfg.train.batch},
               {"lr", cfg.train.lr},
               {"adam_beta1", cfg.train.adam_beta1},
               {"adam_beta2", cfg.train.adam_beta2},
               {"adam_eps", cfg.train.adam_eps},
               {"seed", cfg.train.seed},
               {"class_weights", nullptr}};
    if (cfg.train.class_weights) train["class_weights"] = *cfg.train.class_weights;
    const json j{{"data",
                  {{"root", cfg.data.root},
                   {"manifest", cfg.data.manifest},
                   {"tiles_dir", cfg.data.tiles_dir}}},
                 {"model", model_to_json(cfg.train.model)},
                 {"train", train},
                 {"legend", legend_to_json(cfg.legend)},
                 {"output_dir", cfg.output_dir}};
    return j.dump(2) + "\n";
}

std::string model_config_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

ModelConfig parse_model_config(std::string_view json_text) {
    ModelConfig m = model_from_json(parse_json(json_text, "model"), "model");
    m.validate();
    return m;
}

std::string fnv1a64_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

std::string config_digest(const RunConfig& cfg) { return fnv1a64_hex(to_json(cfg)); }

}  // namespace attnseg
