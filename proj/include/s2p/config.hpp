#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "s2p/data.hpp"
#include "s2p/pseudo.hpp"
#include "s2p/s2p.hpp"

namespace s2p {

enum class ReidMode { SpCL, StrongBaseline };
enum class TeacherMode { TaskFrozen, TaskEMA, IterEMA };

std::string to_string(ReidMode m);
std::string to_string(TeacherMode m);
ReidMode parse_reid_mode(const std::string& s);
TeacherMode parse_teacher_mode(const std::string& s);

struct RunConfig {
    int n_tasks = 5;
    int epochs_per_task = 20;
    int pretrain_epochs = 20;
    int P = 16;
    int K = 4;
    double alpha = 0.999;
    double lr = 3.5e-4;
    double pretrain_lr = 3.5e-4;
    double weight_decay = 5e-4;
    double lambda_kd = 1.0;
    double lambda_mmd = 1.0;
    ReidMode reid_mode = ReidMode::SpCL;
    SupportMode support_mode = SupportMode::IdentityExpanded;
    TeacherMode teacher_mode = TeacherMode::IterEMA;
    bool enable_kd = true;
    bool enable_mmd = true;
    bool accumulate_support = false;
    int support_cap = 0;
    bool shared_batch = false;
    std::uint64_t seed = 1;
    std::vector<int> hidden_dims{64};
    int feature_dim = 32;
    double triplet_margin = 0.3;
    double memory_momentum = 0.2;
    double memory_temperature = 0.05;
    DbscanParams dbscan;
    SynthConfig synth;
    /// Directory holding source_train/target_train/target_query/target_gallery feature
    /// files; empty means generate synthetic data from `synth`.
    std::string data_dir;
    bool checkpoints = false;

    /// Layer dimensions [D_in, hidden..., feature_dim].
    std::vector<int> layer_dims(int input_dim) const;
    bool operator==(const RunConfig& o) const;
};

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& key, const std::string& location, const std::string& message)
        : std::runtime_error(location + ": " + (key.empty() ? "" : "'" + key + "': ") + message),
          key_(key), location_(location) {}
    const std::string& key() const { return key_; }
    const std::string& location() const { return location_; }

private:
    std::string key_;
    std::string location_;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;

/// Every recognised key, in snapshot order.
const std::vector<std::string>& config_keys();
bool is_config_key(const std::string& key);

/// Sets one key from its text value; `location` is used in error messages.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& location = "<override>");
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Parses `key = value` lines (`#` starts a comment) into `cfg`.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);

/// Defaults, then the file (if non-empty), then overrides; validated.
RunConfig parse_config(const std::filesystem::path& file, const ConfigOverrides& overrides = {});
RunConfig parse_config_text(const std::string& text, const ConfigOverrides& overrides = {});

/// Range checks; throws ConfigError naming the key.
void validate_config(const RunConfig& cfg);

/// Every key in `key = value` form; parse_config_text(snapshot(cfg)) == cfg.
std::string config_snapshot(const RunConfig& cfg);

}  // namespace s2p
