#include "a2nl/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "a2nl/rng.hpp"

namespace a2nl {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

long parse_int(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    long v = 0;
    try {
        v = std::stol(value, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad integer for key '" + key + "'");
    }
    if (pos != value.size()) {
        throw std::invalid_argument("config: bad integer for key '" + key + "'");
    }
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for key '" + key + "'");
    }
    if (pos != value.size()) {
        throw std::invalid_argument("config: bad number for key '" + key + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw std::invalid_argument("config: bad boolean for key '" + key + "'");
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.resize(hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config: malformed line '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));

        if (key == "seed") {
            cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
        } else if (key == "out_dir") {
            cfg.out_dir = value;
        } else if (key == "world.seed") {
            cfg.world.seed = static_cast<std::uint64_t>(parse_int(key, value));
        } else if (key == "world.L") {
            cfg.world.L = static_cast<int>(parse_int(key, value));
        } else if (key == "world.d_a") {
            cfg.world.d_a = static_cast<int>(parse_int(key, value));
        } else if (key == "world.d_v") {
            cfg.world.d_v = static_cast<int>(parse_int(key, value));
        } else if (key == "world.M") {
            cfg.world.M = static_cast<int>(parse_int(key, value));
        } else if (key == "world.smooth") {
            cfg.world.smooth = parse_double(key, value);
        } else if (key == "world.noise_sigma") {
            cfg.world.noise_sigma = parse_double(key, value);
        } else if (key == "model.num_layers") {
            cfg.model.num_layers = static_cast<int>(parse_int(key, value));
        } else if (key == "model.token_dim") {
            cfg.model.token_dim = static_cast<int>(parse_int(key, value));
        } else if (key == "model.ffn_dim") {
            cfg.model.ffn_dim = static_cast<int>(parse_int(key, value));
        } else if (key == "model.num_heads") {
            cfg.model.num_heads = static_cast<int>(parse_int(key, value));
        } else if (key == "model.max_len") {
            cfg.model.max_len = static_cast<int>(parse_int(key, value));
        } else if (key == "model.attention") {
            if (value == "bidirectional") {
                cfg.model.attention_mode = AttentionMode::bidirectional;
            } else if (value == "causal") {
                cfg.model.attention_mode = AttentionMode::causal;
            } else {
                throw std::invalid_argument("config: bad value for key 'model.attention'");
            }
        } else if (key == "schedule.kind") {
            if (value == "linear") {
                cfg.schedule_kind = ScheduleKind::linear;
            } else if (value == "cosine") {
                cfg.schedule_kind = ScheduleKind::cosine;
            } else {
                throw std::invalid_argument("config: bad value for key 'schedule.kind'");
            }
        } else if (key == "schedule.T") {
            cfg.schedule_T = static_cast<int>(parse_int(key, value));
        } else if (key == "train.batch_size") {
            cfg.train.batch_size = static_cast<int>(parse_int(key, value));
        } else if (key == "train.steps") {
            cfg.train.steps = static_cast<int>(parse_int(key, value));
        } else if (key == "train.lr") {
            cfg.train.lr = parse_double(key, value);
        } else if (key == "train.cond_dropout") {
            cfg.train.cond_dropout = parse_double(key, value);
        } else if (key == "train.mask_hint_prob") {
            cfg.train.mask_hint_prob = parse_double(key, value);
        } else if (key == "train.velocity_loss") {
            cfg.train.velocity_loss = parse_bool(key, value);
        } else if (key == "train.mask_editing") {
            cfg.train.mask_editing = parse_bool(key, value);
        } else if (key == "train.log_every") {
            cfg.train.log_every = static_cast<int>(parse_int(key, value));
        } else if (key == "sampler.guidance") {
            cfg.sampler.guidance = parse_double(key, value);
        } else if (key == "sampler.steps") {
            cfg.sampler.steps = static_cast<int>(parse_int(key, value));
        } else if (key == "eval.videos") {
            cfg.eval.videos = static_cast<int>(parse_int(key, value));
        } else if (key == "eval.mm_runs") {
            cfg.eval.mm_runs = static_cast<int>(parse_int(key, value));
        } else if (key == "eval.mm_conditions") {
            cfg.eval.mm_conditions = static_cast<int>(parse_int(key, value));
        } else if (key == "eval.paired") {
            cfg.eval.paired = parse_bool(key, value);
        } else {
            throw std::invalid_argument("config: unknown key '" + key + "'");
        }
    }
    // Model feature dims always follow the world.
    cfg.model.d_v = cfg.world.d_v;
    cfg.model.d_a = cfg.world.d_a;
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

void RunConfig::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("config: cannot open '" + path + "' for writing");
    os << canonical_text();
    if (!os) throw std::runtime_error("config: write failed for '" + path + "'");
}

std::string RunConfig::canonical_text() const {
    std::map<std::string, std::string> kv;
    kv["seed"] = std::to_string(seed);
    kv["out_dir"] = out_dir;
    kv["world.seed"] = std::to_string(world.seed);
    kv["world.L"] = std::to_string(world.L);
    kv["world.d_a"] = std::to_string(world.d_a);
    kv["world.d_v"] = std::to_string(world.d_v);
    kv["world.M"] = std::to_string(world.M);
    kv["world.smooth"] = format_double(world.smooth);
    kv["world.noise_sigma"] = format_double(world.noise_sigma);
    kv["model.num_layers"] = std::to_string(model.num_layers);
    kv["model.token_dim"] = std::to_string(model.token_dim);
    kv["model.ffn_dim"] = std::to_string(model.ffn_dim);
    kv["model.num_heads"] = std::to_string(model.num_heads);
    kv["model.max_len"] = std::to_string(model.max_len);
    kv["model.attention"] =
        model.attention_mode == AttentionMode::causal ? "causal" : "bidirectional";
    kv["schedule.kind"] = schedule_kind == ScheduleKind::cosine ? "cosine" : "linear";
    kv["schedule.T"] = std::to_string(schedule_T);
    kv["train.batch_size"] = std::to_string(train.batch_size);
    kv["train.steps"] = std::to_string(train.steps);
    kv["train.lr"] = format_double(train.lr);
    kv["train.cond_dropout"] = format_double(train.cond_dropout);
    kv["train.mask_hint_prob"] = format_double(train.mask_hint_prob);
    kv["train.velocity_loss"] = train.velocity_loss ? "true" : "false";
    kv["train.mask_editing"] = train.mask_editing ? "true" : "false";
    kv["train.log_every"] = std::to_string(train.log_every);
    kv["sampler.guidance"] = format_double(sampler.guidance);
    kv["sampler.steps"] = std::to_string(sampler.steps);
    kv["eval.videos"] = std::to_string(eval.videos);
    kv["eval.mm_runs"] = std::to_string(eval.mm_runs);
    kv["eval.mm_conditions"] = std::to_string(eval.mm_conditions);
    kv["eval.paired"] = eval.paired ? "true" : "false";

    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

std::uint64_t RunConfig::hash() const { return Rng::fnv1a64(canonical_text()); }

std::string RunConfig::hash_hex() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

void RunConfig::validate() const {
    world.validate();
    model.validate();
    if (schedule_T < 1) throw std::invalid_argument("config: schedule.T must be >= 1");
    if (train.batch_size < 1) throw std::invalid_argument("config: train.batch_size must be >= 1");
    if (train.steps < 1) throw std::invalid_argument("config: train.steps must be >= 1");
    if (train.cond_dropout < 0.0 || train.cond_dropout > 1.0) {
        throw std::invalid_argument("config: train.cond_dropout must be in [0, 1]");
    }
    if (train.mask_hint_prob < 0.0 || train.mask_hint_prob > 1.0) {
        throw std::invalid_argument("config: train.mask_hint_prob must be in [0, 1]");
    }
    if (sampler.guidance < 0.0) throw std::invalid_argument("config: sampler.guidance must be >= 0");
    if (sampler.steps < 0 || sampler.steps > schedule_T) {
        throw std::invalid_argument("config: sampler.steps must be in [0, schedule.T]");
    }
    if (world.L > model.max_len) {
        throw std::invalid_argument("config: world.L exceeds model.max_len");
    }
    if (eval.videos < 1 || eval.mm_runs < 2 || eval.mm_conditions < 1) {
        throw std::invalid_argument("config: bad eval section");
    }
}

}  // namespace a2nl
