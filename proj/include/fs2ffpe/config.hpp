#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "fs2ffpe/errors.hpp"

namespace fs2ffpe {

// Weights of the four generator loss terms. All 1.0 by default; the ablation
// arms zero individual entries.
struct LossWeights {
    double gan = 1.0;
    double patchnce = 1.0;
    double crcm = 1.0;
    double wdgm = 1.0;

    bool operator==(const LossWeights&) const = default;
};

// Training hyperparameters. Persisted as a flat key=value text file; unknown
// keys are an error and round-trips are lossless.
struct TrainConfig {
    double lr_initial = 1e-4;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    long long total_iterations = 400000;
    double decay_start_fraction = 0.5;
    int batch_size = 1;
    int tile_size_source = 448;
    int tile_size_net = 224;
    int compare_size = 112;
    LossWeights loss_weights;
    long long seed = 0;

    bool operator==(const TrainConfig&) const = default;

    void validate() const;
    std::string serialize() const;
    static TrainConfig parse(const std::string& text);
    static TrainConfig load_file(const std::string& path);
    void save_file(const std::string& path) const;
    std::uint64_t hash() const;
};

// Constant lr_initial until decay_start_fraction * total_iterations, then
// linear descent reaching exactly 0 at total_iterations.
double lr_at(long long iteration, const TrainConfig& cfg);

// Per-step scalar losses. total_G must equal the weighted sum of
// {gan_G, patchNCE, crcm, wdgm} to 1e-6 relative.
struct LossReport {
    long long iteration = 0;
    std::map<std::string, double> values;

    double at(const std::string& key) const;
    // Checks the total_G identity; throws NumericError on violation.
    void check_total(const LossWeights& w) const;

    static const char* csv_header();  // "iteration,gan_D,gan_G,patchNCE,crcm,wdgm,total_G,lr"
    std::string csv_row(double lr) const;
};

}  // namespace fs2ffpe
