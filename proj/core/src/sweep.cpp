#include <atomic>
#include <cmath>
#include <thread>

#include "peso/harness.hpp"

namespace peso {

SweepResult run_sweep(const ExperimentConfig& config, std::size_t jobs) {
    std::vector<double> lambdas = config.sweep.lambda_values;
    if (lambdas.empty()) lambdas.push_back(config.train.lambda);
    std::vector<double> lr_scales = config.sweep.lr_scales;
    if (lr_scales.empty()) lr_scales.push_back(config.train.lr_scale);
    std::vector<std::uint64_t> seeds = config.sweep.seeds;
    if (seeds.empty()) seeds.push_back(config.train.seed);

    SweepResult result;
    for (double lambda : lambdas)
        for (double lr_scale : lr_scales)
            for (std::uint64_t seed : seeds) {
                SweepCell cell;
                cell.lambda = lambda;
                cell.lr_scale = lr_scale;
                cell.seed = seed;
                result.cells.push_back(std::move(cell));
            }

    std::atomic<std::size_t> next{0};
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(jobs, result.cells.size()));
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= result.cells.size()) break;
            SweepCell& cell = result.cells[i];
            ExperimentConfig cell_config = config;
            cell_config.train.lambda = cell.lambda;
            cell_config.train.lr_scale = cell.lr_scale;
            cell_config.train.seed = cell.seed;
            cell_config.save_checkpoints = false;
            try {
                cell.report = run_pipeline(cell_config);
                cell.ok = true;
            } catch (const std::exception& e) {
                cell.ok = false;
                cell.error = e.what();
            }
        }
    };
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    // Mean ± std over seeds per (λ, lr*) cell, in sweep-list order.
    for (double lambda : lambdas) {
        for (double lr_scale : lr_scales) {
            std::map<std::string, std::vector<double>> samples;
            for (const SweepCell& cell : result.cells) {
                if (!cell.ok || cell.lambda != lambda || cell.lr_scale != lr_scale) continue;
                for (const auto& [metric, value] : cell.report.cross_stage_mean)
                    samples[metric].push_back(value);
            }
            for (const auto& [metric, values] : samples) {
                SweepSummaryRow row;
                row.lambda = lambda;
                row.lr_scale = lr_scale;
                row.metric = metric;
                row.n_seeds = values.size();
                double mean = 0.0;
                for (double v : values) mean += v;
                mean /= static_cast<double>(values.size());
                double var = 0.0;
                for (double v : values) var += (v - mean) * (v - mean);
                var /= static_cast<double>(values.size());
                row.mean = mean;
                row.stddev = std::sqrt(var);
                result.summary.push_back(std::move(row));
            }
        }
    }
    return result;
}

}  // namespace peso
