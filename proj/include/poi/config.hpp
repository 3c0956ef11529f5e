#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "poi/trajectory.hpp"

namespace poi {

// Flat key=value configuration. Every key has a default; anything else is
// rejected. Files are UTF-8 lines of `key=value`, `#` starts a comment.
class RunConfig {
public:
    RunConfig() : values_(defaults()) {}

    static const std::map<std::string, std::string>& defaults() {
        static const std::map<std::string, std::string> d = {
            // paths
            {"data_dir", "data"},
            {"out_dir", "out"},
            {"checkpoint", ""},
            {"task_file", ""},
            // dataset generation
            {"interaction_count", "2000"},
            {"observation_count", "200"},
            {"eval_count", "100"},
            {"length", "17"},
            {"frame_h", "16"},
            {"frame_w", "16"},
            // model
            {"shared_dim", "3"},
            {"domain_dim", "2"},
            {"action_dim", "2"},
            {"context", "2"},
            {"act_hidden", "64"},
            {"inv_c1", "32"},
            {"inv_c2", "64"},
            {"inv_c3", "128"},
            {"gen_channels", "32"},
            {"prior_lstm_hidden", "64"},
            // loss weights
            {"image_l1", "1"},
            {"action_mse", "0.0001"},
            {"kl", "0.000001"},
            {"js_alpha", "0.0000001"},
            {"tv", "0.001"},
            // training
            {"batch_size", "12"},
            {"interaction_per_batch", "9"},
            {"observation_per_batch", "3"},
            {"lr", "0.001"},
            {"beta1", "0.9"},
            {"beta2", "0.999"},
            {"schedule_k", "900"},
            {"horizon", "15"},
            {"mode", "poi"},
            {"seed", "0"},
            {"steps", "1000"},
            {"val_interval", "250"},
            {"val_members", "12"},
            {"inv_weight", "1"},
            // planner
            {"cem_iterations", "4"},
            {"cem_candidates", "1200"},
            {"cem_elite_fraction", "0.05"},
            {"plan_horizon", "18"},
            {"unique_actions", "6"},
            {"action_repeat", "3"},
            {"init_std", "0.05"},
            {"plan_tasks", "20"},
            // evaluation
            {"eval_horizon", "15"},
            {"eval_max_trajectories", "0"}, // 0 = all
        };
        return d;
    }

    void set(const std::string& key, const std::string& value) {
        auto it = values_.find(key);
        if (it == values_.end()) throw DataError("config: unknown key '" + key + "'");
        it->second = value;
        for (auto& [k, v] : set_order_)
            if (k == key) {
                v = value;
                return;
            }
        set_order_.emplace_back(key, value);
    }

    const std::string& get(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw DataError("config: unknown key '" + key + "'");
        return it->second;
    }

    int get_int(const std::string& key) const {
        try {
            size_t pos = 0;
            int v = std::stoi(get(key), &pos);
            if (pos != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw DataError("config: key '" + key + "' is not an integer: " + get(key));
        }
    }

    uint64_t get_u64(const std::string& key) const {
        try {
            size_t pos = 0;
            uint64_t v = std::stoull(get(key), &pos);
            if (pos != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw DataError("config: key '" + key + "' is not an unsigned integer: " + get(key));
        }
    }

    double get_double(const std::string& key) const {
        try {
            size_t pos = 0;
            double v = std::stod(get(key), &pos);
            if (pos != get(key).size()) throw std::invalid_argument(key);
            return v;
        } catch (const std::exception&) {
            throw DataError("config: key '" + key + "' is not a number: " + get(key));
        }
    }

    // Explicitly-set entries in first-set order; reproduces a parsed file
    // byte-for-byte minus comments and blank lines.
    std::string serialize() const {
        std::string out;
        for (const auto& [k, v] : set_order_) out += k + "=" + v + "\n";
        return out;
    }

    void parse_line(const std::string& line) {
        std::string trimmed = line;
        if (!trimmed.empty() && trimmed.back() == '\r') trimmed.pop_back();
        if (trimmed.empty() || trimmed[0] == '#') return;
        size_t eq = trimmed.find('=');
        if (eq == std::string::npos)
            throw DataError("config: malformed line (expected key=value): " + trimmed);
        set(trimmed.substr(0, eq), trimmed.substr(eq + 1));
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read config file: " + path);
        RunConfig cfg;
        std::string line;
        while (std::getline(in, line)) cfg.parse_line(line);
        return cfg;
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::pair<std::string, std::string>> set_order_;
};

} // namespace poi
