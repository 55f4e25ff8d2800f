// SPDX-License-Identifier: Apache-2.0
#include "modem/config.hpp"

#include <cstdlib>
#include <set>

#include "json.hpp"
#include "modem/checkpoint.hpp"

namespace modem::config {

namespace {

using nlohmann::json;

void check_keys(const json &obj, const std::string &where, const std::set<std::string> &allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto &[key, _] : obj.items())
        if (!allowed.count(key)) {
            std::string list;
            for (const auto &k : allowed) list += (list.empty() ? "" : ", ") + k;
            throw ConfigError("unknown key '" + key + "' in " + where + " (allowed: " + list + ")");
        }
}

template <typename T>
void read(const json &obj, const char *key, const std::string &where, T &out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) throw ConfigError("");
        } else if constexpr (std::is_unsigned_v<T>) {
            if (!it->is_number_unsigned()) throw ConfigError("");
        } else if constexpr (std::is_integral_v<T>) {
            if (!it->is_number_integer()) throw ConfigError("");
        }
        out = it->get<T>();
    } catch (const std::exception &) {
        throw ConfigError(where + "." + key + " has the wrong type (" + std::string(it->type_name()) + ")");
    }
}

void parse_model_into(const json &m, nn::ModelConfig &cfg) {
    const std::string where = "model";
    check_keys(m, where,
               {"channels", "depths", "refine", "expand", "state", "dt_rank", "scan", "bidirectional", "ddem"});
    read(m, "channels", where, cfg.backbone.channels);
    read(m, "depths", where, cfg.backbone.depths);
    read(m, "refine", where, cfg.backbone.refine);
    read(m, "expand", where, cfg.block.expand);
    read(m, "state", where, cfg.block.state);
    read(m, "dt_rank", where, cfg.block.dt_rank);
    read(m, "bidirectional", where, cfg.block.bidirectional);
    if (m.contains("scan")) {
        std::string s;
        read(m, "scan", where, s);
        try {
            cfg.block.scan = scan::parse_scan(s);
        } catch (const std::exception &e) {
            throw ConfigError(std::string("model.scan: ") + e.what());
        }
    }
    if (m.contains("ddem")) {
        const json &d = m["ddem"];
        const std::string w = "model.ddem";
        check_keys(d, w, {"channels", "groups", "group_depth", "stem_stride", "c_d", "c_d1", "c_d2"});
        read(d, "channels", w, cfg.ddem.channels);
        read(d, "groups", w, cfg.ddem.groups);
        read(d, "group_depth", w, cfg.ddem.group_depth);
        read(d, "stem_stride", w, cfg.ddem.stem_stride);
        read(d, "c_d", w, cfg.ddem.c_d);
        read(d, "c_d1", w, cfg.ddem.c_d1);
        read(d, "c_d2", w, cfg.ddem.c_d2);
    }
    const auto &b = cfg.backbone;
    if (b.depths.empty() || b.depths.size() % 2 == 0) throw ConfigError("model.depths needs an odd, nonzero length");
    if (b.channels == 0 || cfg.block.expand == 0 || cfg.block.state == 0 || cfg.block.dt_rank == 0)
        throw ConfigError("model channels, expand, state and dt_rank must be positive");
    if (b.levels() > 1 && b.channels % 2 != 0) throw ConfigError("model.channels must be even to downsample");
    const auto &d = cfg.ddem;
    if (d.channels == 0 || d.c_d == 0 || d.c_d1 == 0 || d.c_d2 == 0 || d.stem_stride == 0)
        throw ConfigError("model.ddem extents and stem_stride must be positive");
}

json model_json(const nn::ModelConfig &c) {
    json m;
    m["channels"] = c.backbone.channels;
    m["depths"] = c.backbone.depths;
    m["refine"] = c.backbone.refine;
    m["expand"] = c.block.expand;
    m["state"] = c.block.state;
    m["dt_rank"] = c.block.dt_rank;
    m["scan"] = scan::to_string(c.block.scan);
    m["bidirectional"] = c.block.bidirectional;
    m["ddem"] = {{"channels", c.ddem.channels}, {"groups", c.ddem.groups},       {"group_depth", c.ddem.group_depth},
                 {"stem_stride", c.ddem.stem_stride}, {"c_d", c.ddem.c_d}, {"c_d1", c.ddem.c_d1},
                 {"c_d2", c.ddem.c_d2}};
    return m;
}

json parse_text(const std::string &text) {
    try {
        return json::parse(text);
    } catch (const json::parse_error &e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
}

}  // namespace

RunConfig toy_preset() {
    RunConfig c;
    c.preset = "toy";
    auto &m = c.model;
    m.backbone.channels = 8;
    m.backbone.depths = {1, 1, 1};
    m.backbone.refine = 1;
    m.block.expand = 2;
    m.block.state = 4;
    m.block.dt_rank = 2;
    m.ddem.channels = 8;
    m.ddem.groups = 1;
    m.ddem.group_depth = 1;
    m.ddem.stem_stride = 2;
    m.ddem.c_d = 16;
    m.ddem.c_d1 = 4;
    m.ddem.c_d2 = 4;

    auto &t = c.train;
    t.iterations = 1000;
    t.batch = 2;
    t.patch = 64;
    t.schedule.peak = 2e-3;
    t.schedule.periods = {1000};
    t.schedule.restart_weights = {1.0};
    t.schedule.eta_mins = {1e-5};

    c.data.train = 64;
    c.data.held_out = 16;
    c.data.size = 64;
    c.data.kinds = {synth::Kind::mixed};
    c.out_dir = "runs/toy";
    return c;
}

RunConfig full_preset() {
    RunConfig c = toy_preset();
    c.preset = "full";
    c.model = nn::ModelConfig{};
    c.train.schedule.peak = 3e-4;
    c.train.schedule.periods = {400, 600};
    c.train.schedule.restart_weights = {1.0, 1.0};
    c.train.schedule.eta_mins = {3e-4, 1e-6};
    c.out_dir = "runs/full";
    return c;
}

RunConfig preset(const std::string &name) {
    if (name == "toy") return toy_preset();
    if (name == "full") return full_preset();
    throw ConfigError("unknown preset '" + name + "' (expected toy or full)");
}

RunConfig parse(const std::string &text) {
    const json j = parse_text(text);
    check_keys(j, "config", {"preset", "model", "train", "data", "out_dir"});
    std::string name = "toy";
    read(j, "preset", "config", name);
    RunConfig cfg = preset(name);
    read(j, "out_dir", "config", cfg.out_dir);
    if (j.contains("model")) parse_model_into(j["model"], cfg.model);

    if (j.contains("train")) {
        const json &t = j["train"];
        const std::string w = "train";
        check_keys(t, w,
                   {"stage", "iterations", "batch", "patch", "progressive_patch", "lr", "periods", "restart_weights",
                    "eta_mins", "betas", "eps", "weight_decay", "seed", "freeze_backbone", "use_kl", "probe"});
        auto &tc = cfg.train;
        read(t, "stage", w, tc.stage);
        read(t, "iterations", w, tc.iterations);
        read(t, "batch", w, tc.batch);
        read(t, "patch", w, tc.patch);
        read(t, "progressive_patch", w, tc.progressive_patch);
        read(t, "lr", w, tc.schedule.peak);
        read(t, "periods", w, tc.schedule.periods);
        read(t, "restart_weights", w, tc.schedule.restart_weights);
        read(t, "eta_mins", w, tc.schedule.eta_mins);
        if (t.contains("betas")) {
            std::vector<double> betas;
            read(t, "betas", w, betas);
            if (betas.size() != 2) throw ConfigError("train.betas needs exactly two values");
            tc.adam.beta1 = betas[0];
            tc.adam.beta2 = betas[1];
        }
        read(t, "eps", w, tc.adam.eps);
        read(t, "weight_decay", w, tc.adam.weight_decay);
        read(t, "seed", w, tc.seed);
        read(t, "freeze_backbone", w, tc.freeze_backbone);
        read(t, "use_kl", w, tc.use_kl);
        read(t, "probe", w, tc.probe);
        if (tc.stage != 1 && tc.stage != 2) throw ConfigError("train.stage must be 1 or 2");
        if (tc.batch == 0 || tc.patch == 0) throw ConfigError("train.batch and train.patch must be positive");
        try {
            tc.schedule.validate();
        } catch (const std::invalid_argument &e) {
            throw ConfigError(std::string("train: ") + e.what());
        }
    }

    if (j.contains("data")) {
        const json &d = j["data"];
        const std::string w = "data";
        check_keys(d, w, {"train", "held_out", "size", "kinds", "severity_min", "severity_max", "seed"});
        auto &dc = cfg.data;
        read(d, "train", w, dc.train);
        read(d, "held_out", w, dc.held_out);
        read(d, "size", w, dc.size);
        read(d, "severity_min", w, dc.severity_min);
        read(d, "severity_max", w, dc.severity_max);
        read(d, "seed", w, dc.seed);
        if (d.contains("kinds")) {
            std::vector<std::string> kinds;
            read(d, "kinds", w, kinds);
            dc.kinds.clear();
            try {
                for (const auto &k : kinds) dc.kinds.push_back(synth::parse_kind(k));
            } catch (const std::invalid_argument &e) {
                throw ConfigError(std::string("data.kinds: ") + e.what());
            }
        }
        if (dc.kinds.empty() || dc.train == 0 || dc.size == 0)
            throw ConfigError("data needs kinds, a nonzero train count and a nonzero size");
        if (!(0.0 <= dc.severity_min && dc.severity_min <= dc.severity_max && dc.severity_max <= 1.0))
            throw ConfigError("data severity range must satisfy 0 <= min <= max <= 1");
    }
    if (cfg.train.patch > cfg.data.size) throw ConfigError("train.patch exceeds data.size");
    return cfg;
}

RunConfig load(const std::filesystem::path &path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception &e) {
        throw ConfigError("cannot read config " + path.string() + ": " + e.what());
    }
    return parse(text);
}

std::string dump(const RunConfig &c) {
    json j;
    j["preset"] = c.preset;
    j["model"] = model_json(c.model);
    const auto &t = c.train;
    j["train"] = {{"stage", t.stage},
                  {"iterations", t.iterations},
                  {"batch", t.batch},
                  {"patch", t.patch},
                  {"progressive_patch", t.progressive_patch},
                  {"lr", t.schedule.peak},
                  {"periods", t.schedule.periods},
                  {"restart_weights", t.schedule.restart_weights},
                  {"eta_mins", t.schedule.eta_mins},
                  {"betas", {t.adam.beta1, t.adam.beta2}},
                  {"eps", t.adam.eps},
                  {"weight_decay", t.adam.weight_decay},
                  {"seed", t.seed},
                  {"freeze_backbone", t.freeze_backbone},
                  {"use_kl", t.use_kl},
                  {"probe", t.probe}};
    std::vector<std::string> kinds;
    for (auto k : c.data.kinds) kinds.push_back(synth::to_string(k));
    j["data"] = {{"train", c.data.train},
                 {"held_out", c.data.held_out},
                 {"size", c.data.size},
                 {"kinds", kinds},
                 {"severity_min", c.data.severity_min},
                 {"severity_max", c.data.severity_max},
                 {"seed", c.data.seed}};
    j["out_dir"] = c.out_dir;
    return j.dump(2) + "\n";
}

std::string dump_model(const nn::ModelConfig &cfg) { return model_json(cfg).dump(2) + "\n"; }

nn::ModelConfig parse_model(const std::string &text) {
    nn::ModelConfig cfg;
    parse_model_into(parse_text(text), cfg);
    return cfg;
}

void apply_seed_override(RunConfig &cfg) {
    const char *env = std::getenv("MODEM_SEED");
    if (!env || !*env) return;
    char *end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw ConfigError(std::string("MODEM_SEED is not an unsigned integer: ") + env);
    cfg.train.seed = v;
    cfg.data.seed = v;
}

}  // namespace modem::config
