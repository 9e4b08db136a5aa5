#include "s2p/config.hpp"

#include <cerrno>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "s2p/util.hpp"

namespace s2p {

std::string to_string(ReidMode m) { return m == ReidMode::SpCL ? "spcl" : "strong_baseline"; }

std::string to_string(TeacherMode m) {
    switch (m) {
        case TeacherMode::TaskFrozen: return "task_frozen";
        case TeacherMode::TaskEMA: return "task_ema";
        case TeacherMode::IterEMA: return "iter_ema";
    }
    return "iter_ema";
}

ReidMode parse_reid_mode(const std::string& s) {
    if (s == "spcl") return ReidMode::SpCL;
    if (s == "strong_baseline") return ReidMode::StrongBaseline;
    throw std::invalid_argument("unknown reid mode '" + s + "' (spcl|strong_baseline)");
}

TeacherMode parse_teacher_mode(const std::string& s) {
    if (s == "task_frozen") return TeacherMode::TaskFrozen;
    if (s == "task_ema") return TeacherMode::TaskEMA;
    if (s == "iter_ema") return TeacherMode::IterEMA;
    throw std::invalid_argument("unknown teacher mode '" + s + "' (task_frozen|task_ema|iter_ema)");
}

std::vector<int> RunConfig::layer_dims(int input_dim) const {
    std::vector<int> dims{input_dim};
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(feature_dim);
    return dims;
}

bool RunConfig::operator==(const RunConfig& o) const { return config_snapshot(*this) == config_snapshot(o); }

namespace {

struct KeyDef {
    std::string name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad_type(const char* type) { throw std::invalid_argument(std::string("expected ") + type); }

long long to_int(const std::string& s) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(s, &pos);
    } catch (const std::exception&) {
        bad_type("an integer");
    }
    if (pos != s.size()) bad_type("an integer");
    return v;
}

double to_double(const std::string& s) {
    char* end = nullptr;
    errno = 0;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) bad_type("a finite number");
    return v;
}

bool to_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    bad_type("a boolean (true|false)");
}

std::uint64_t to_u64(const std::string& s) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    if (s.empty() || s[0] == '-') bad_type("a non-negative integer");
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        bad_type("a non-negative integer");
    }
    if (pos != s.size()) bad_type("a non-negative integer");
    return v;
}

int to_int32(const std::string& s) {
    const long long v = to_int(s);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) bad_type("a 32-bit integer");
    return int(v);
}

std::vector<int> to_int_list(const std::string& s) {
    std::vector<int> out;
    if (s.empty() || s == "none") return out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(to_int32(tok));
    return out;
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::string from_list(const std::vector<int>& v) {
    if (v.empty()) return "none";
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

#define S2P_INT(key, field) \
    KeyDef{key, [](RunConfig& c, const std::string& v) { c.field = to_int32(v); }, \
           [](const RunConfig& c) { return std::to_string(c.field); }}
#define S2P_DOUBLE(key, field) \
    KeyDef{key, [](RunConfig& c, const std::string& v) { c.field = to_double(v); }, \
           [](const RunConfig& c) { return format_double(c.field); }}
#define S2P_BOOL(key, field) \
    KeyDef{key, [](RunConfig& c, const std::string& v) { c.field = to_bool(v); }, \
           [](const RunConfig& c) { return from_bool(c.field); }}
#define S2P_U64(key, field) \
    KeyDef{key, [](RunConfig& c, const std::string& v) { c.field = to_u64(v); }, \
           [](const RunConfig& c) { return std::to_string(c.field); }}

const std::vector<KeyDef>& key_table() {
    static const std::vector<KeyDef> table = {
        S2P_INT("n_tasks", n_tasks),
        S2P_INT("epochs_per_task", epochs_per_task),
        S2P_INT("pretrain_epochs", pretrain_epochs),
        S2P_INT("P", P),
        S2P_INT("K", K),
        S2P_DOUBLE("alpha", alpha),
        S2P_DOUBLE("lr", lr),
        S2P_DOUBLE("pretrain_lr", pretrain_lr),
        S2P_DOUBLE("weight_decay", weight_decay),
        S2P_DOUBLE("lambda_kd", lambda_kd),
        S2P_DOUBLE("lambda_mmd", lambda_mmd),
        KeyDef{"reid_mode", [](RunConfig& c, const std::string& v) { c.reid_mode = parse_reid_mode(v); },
               [](const RunConfig& c) { return to_string(c.reid_mode); }},
        KeyDef{"support_mode", [](RunConfig& c, const std::string& v) { c.support_mode = parse_support_mode(v); },
               [](const RunConfig& c) { return to_string(c.support_mode); }},
        KeyDef{"teacher_mode", [](RunConfig& c, const std::string& v) { c.teacher_mode = parse_teacher_mode(v); },
               [](const RunConfig& c) { return to_string(c.teacher_mode); }},
        S2P_BOOL("enable_kd", enable_kd),
        S2P_BOOL("enable_mmd", enable_mmd),
        S2P_BOOL("accumulate_support", accumulate_support),
        S2P_INT("support_cap", support_cap),
        S2P_BOOL("shared_batch", shared_batch),
        S2P_U64("seed", seed),
        KeyDef{"hidden_dims", [](RunConfig& c, const std::string& v) { c.hidden_dims = to_int_list(v); },
               [](const RunConfig& c) { return from_list(c.hidden_dims); }},
        S2P_INT("feature_dim", feature_dim),
        S2P_DOUBLE("triplet_margin", triplet_margin),
        S2P_DOUBLE("memory.momentum", memory_momentum),
        S2P_DOUBLE("memory.temperature", memory_temperature),
        KeyDef{"dbscan.eps",
               [](RunConfig& c, const std::string& v) {
                   if (v == "adaptive") {
                       c.dbscan.adaptive = true;
                   } else {
                       c.dbscan.adaptive = false;
                       c.dbscan.eps = to_double(v);
                   }
               },
               [](const RunConfig& c) { return c.dbscan.adaptive ? std::string("adaptive") : format_double(c.dbscan.eps); }},
        S2P_DOUBLE("dbscan.percentile", dbscan.percentile),
        S2P_INT("dbscan.min_pts", dbscan.min_pts),
        S2P_INT("dbscan.min_cluster_size", dbscan.min_cluster_size),
        S2P_INT("synth.n_ids_source", synth.n_identities_source),
        S2P_INT("synth.n_ids_target", synth.n_identities_target),
        S2P_INT("synth.samples_per_identity", synth.samples_per_identity),
        S2P_INT("synth.dim", synth.dim),
        S2P_DOUBLE("synth.centroid_std", synth.centroid_std),
        S2P_DOUBLE("synth.intra_class_std", synth.intra_class_std),
        S2P_INT("synth.camera_count", synth.camera_count),
        S2P_DOUBLE("synth.camera_jitter_std", synth.camera_jitter_std),
        S2P_DOUBLE("synth.shift_magnitude", synth.shift_magnitude),
        S2P_INT("synth.query_per_identity", synth.query_per_identity),
        S2P_INT("synth.gallery_per_identity", synth.gallery_per_identity),
        S2P_U64("synth.seed", synth.seed),
        KeyDef{"data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v == "none" ? "" : v; },
               [](const RunConfig& c) { return c.data_dir.empty() ? std::string("none") : c.data_dir; }},
        S2P_BOOL("checkpoints", checkpoints),
    };
    return table;
}

#undef S2P_INT
#undef S2P_DOUBLE
#undef S2P_BOOL
#undef S2P_U64

const KeyDef* find_key(const std::string& key) {
    for (const auto& k : key_table())
        if (k.name == key) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& d : key_table()) k.push_back(d.name);
        return k;
    }();
    return keys;
}

bool is_config_key(const std::string& key) { return find_key(key) != nullptr; }

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& location) {
    const KeyDef* def = find_key(key);
    if (!def) throw ConfigError(key, location, "unknown key");
    try {
        def->set(cfg, value);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(key, location, std::string(e.what()) + ", got '" + value + "'");
    }
}

std::string get_config_value(const RunConfig& cfg, const std::string& key) {
    const KeyDef* def = find_key(key);
    if (!def) throw ConfigError(key, "<query>", "unknown key");
    return def->get(cfg);
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string location = origin + ":" + std::to_string(line_no);
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("", location, "expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("", location, "empty key");
        set_config_value(cfg, key, value, location);
    }
}

void validate_config(const RunConfig& c) {
    auto fail = [](const std::string& key, const std::string& msg) { throw ConfigError(key, "<validation>", msg); };
    if (c.n_tasks < 1) fail("n_tasks", "must be >= 1");
    if (c.epochs_per_task < 0) fail("epochs_per_task", "must be >= 0");
    if (c.pretrain_epochs < 0) fail("pretrain_epochs", "must be >= 0");
    if (c.P < 1) fail("P", "must be >= 1");
    if (c.K < 2) fail("K", "must be >= 2 (triplet mining needs two samples per identity)");
    if (!(c.alpha >= 0.0 && c.alpha < 1.0)) fail("alpha", "must lie in [0, 1)");
    if (!(c.lr > 0.0)) fail("lr", "must be positive");
    if (!(c.pretrain_lr > 0.0)) fail("pretrain_lr", "must be positive");
    if (c.weight_decay < 0.0) fail("weight_decay", "must be >= 0");
    if (c.lambda_kd < 0.0) fail("lambda_kd", "must be >= 0");
    if (c.lambda_mmd < 0.0) fail("lambda_mmd", "must be >= 0");
    if (c.support_cap < 0) fail("support_cap", "must be >= 0");
    for (int h : c.hidden_dims)
        if (h < 1) fail("hidden_dims", "dimensions must be positive");
    if (c.feature_dim < 1) fail("feature_dim", "must be positive");
    if (!(c.triplet_margin >= 0.0)) fail("triplet_margin", "must be >= 0");
    if (!(c.memory_momentum >= 0.0 && c.memory_momentum < 1.0)) fail("memory.momentum", "must lie in [0, 1)");
    if (!(c.memory_temperature > 0.0)) fail("memory.temperature", "must be positive");
    if (!c.dbscan.adaptive && !(c.dbscan.eps > 0.0)) fail("dbscan.eps", "must be positive or 'adaptive'");
    if (!(c.dbscan.percentile > 0.0 && c.dbscan.percentile < 100.0))
        fail("dbscan.percentile", "must lie strictly between 0 and 100");
    if (c.dbscan.min_pts < 1) fail("dbscan.min_pts", "must be >= 1");
    if (c.dbscan.min_cluster_size < 1) fail("dbscan.min_cluster_size", "must be >= 1");
    if (c.synth.n_identities_source < 1) fail("synth.n_ids_source", "must be >= 1");
    if (c.synth.n_identities_target < 1) fail("synth.n_ids_target", "must be >= 1");
    if (c.synth.dim < 1) fail("synth.dim", "must be >= 1");
    if (c.synth.camera_count < 1) fail("synth.camera_count", "must be >= 1");
    if (!(c.synth.centroid_std > 0.0)) fail("synth.centroid_std", "must be positive");
    if (c.synth.intra_class_std < 0.0) fail("synth.intra_class_std", "must be >= 0");
    if (c.synth.camera_jitter_std < 0.0) fail("synth.camera_jitter_std", "must be >= 0");
    if (c.synth.shift_magnitude < 0.0) fail("synth.shift_magnitude", "must be >= 0");
    if (c.synth.samples_per_identity < c.synth.query_per_identity + c.synth.gallery_per_identity + 2)
        fail("synth.samples_per_identity", "must leave at least two train samples per identity");
}

RunConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides) {
    RunConfig cfg;
    apply_config_text(cfg, text, "<text>");
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v, "--" + k);
    validate_config(cfg);
    return cfg;
}

RunConfig parse_config(const std::filesystem::path& file, const ConfigOverrides& overrides) {
    RunConfig cfg;
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw ConfigError("", file.string(), "cannot open config file");
        std::stringstream ss;
        ss << in.rdbuf();
        apply_config_text(cfg, ss.str(), file.string());
    }
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v, "--" + k);
    validate_config(cfg);
    return cfg;
}

std::string config_snapshot(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : key_table()) out += k.name + " = " + k.get(cfg) + "\n";
    return out;
}

}  // namespace s2p
