#pragma once

// Synthetic dyadic benchmarks with planted structure:
//  contingency  B[t+L] = rho A[t] W + sqrt(1 - rho^2) eps (class 1) or the
//               reverse direction (class 2); class 0 has no coupling.
//  longrange    label = early bit + late bit, each planted as a motif in the
//               first / last temporal segment.
//  verbal       weak nonverbal cue plus a prompt context whose canned LLM
//               reasoning names the class (or a fixed uninformative text).
//  cue          nonverbal cue only; pairs with an imbalanced class balance.

#include <map>
#include <string>
#include <vector>

#include "cpmt/data.hpp"

namespace cpmt {

enum class SynthTask { contingency, longrange, verbal, cue };
std::string to_string(SynthTask t);
SynthTask parse_synth_task(const std::string& name);

struct SynthSpec {
    SynthTask task = SynthTask::contingency;
    std::size_t n_fragments = 200;
    std::size_t T = 32;
    std::size_t d_a = 8;
    std::size_t d_v = 8;
    double rho = 0.8;               // contingency strength
    std::size_t lag = 3;            // contingency lag L
    double noise = 0.1;             // observation noise std
    std::size_t longrange_horizon = 4;  // segments; motifs sit in the first and last
    double motif_amplitude = 1.5;
    double cue_strength = 0.2;
    bool informative_text = true;
    std::vector<double> class_balance;  // empty: task default
    std::size_t n_groups = 20;
    std::uint64_t seed = 0;

    std::vector<double> balance() const;  // resolved, validated
    void validate() const;                // DataError on impossible settings
};

std::vector<double> parse_balance(const std::string& csv);
// Preset name "dami-like" or a comma list.
std::vector<double> balance_preset(const std::string& name_or_csv);

struct SynthDataset {
    std::vector<std::string> class_names;
    std::vector<Fragment> fragments;
    std::map<std::string, std::string> fixture;  // prompt hash -> reasoning text
};

// Exact (double precision) in-memory generation.
SynthDataset synth_fragments(const SynthSpec& spec);

// The coupling matrix W of a modality for a given seed.
Tensor synth_coupling(std::uint64_t seed, Modality m, std::size_t d);

// Writes tensor files, the LLM fixture (verbal task) and manifest.json.
Manifest synth_generate(const SynthSpec& spec, const std::string& dir);

}  // namespace cpmt
