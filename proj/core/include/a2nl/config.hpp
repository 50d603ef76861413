#pragma once

#include <cstdint>
#include <string>

#include "a2nl/denoiser.hpp"
#include "a2nl/schedule.hpp"
#include "a2nl/world.hpp"

namespace a2nl {

struct TrainConfig {
    int batch_size = 32;
    int steps = 5000;
    double lr = 1e-4;
    double cond_dropout = 0.10;
    double mask_hint_prob = 0.10;
    bool velocity_loss = true;
    bool mask_editing = true;
    int log_every = 50;
};

struct SamplerDefaults {
    double guidance = 1.5;
    int steps = 0;  // 0 = full schedule
};

struct EvalConfig {
    int videos = 64;
    int mm_runs = 5;
    int mm_conditions = 8;
    bool paired = true;
};

// Flat "key = value" configuration with dotted sections. The canonical text
// (sorted keys, normalized values) is what gets hashed and embedded in every
// output file.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir = "out";
    WorldConfig world;
    DenoiserConfig model;
    ScheduleKind schedule_kind = ScheduleKind::linear;
    int schedule_T = 1000;
    TrainConfig train;
    SamplerDefaults sampler;
    EvalConfig eval;

    // Rejects unknown keys and malformed values, naming the offender.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
    void save(const std::string& path) const;

    std::string canonical_text() const;
    std::uint64_t hash() const;
    std::string hash_hex() const;

    void validate() const;
};

}  // namespace a2nl
