#pragma once

#include <fstream>
#include <string>

#include "cocktail/checkpoint.hpp"

namespace cocktail {

// Line-delimited training log: {stage, epoch, step, mse, cce, total} for
// optimization steps and {stage, epoch, val} for validation passes. The file
// carries no timestamps, so identical runs produce identical bytes.
class TrainLog {
public:
    TrainLog() = default;

    explicit TrainLog(const std::string& path) { open(path); }

    void open(const std::string& path) {
        out_.open(path);
        if (!out_) throw std::runtime_error("train log: cannot write " + path);
    }

    void step(const std::string& stage, std::size_t epoch, std::size_t step_idx, Json mse, Json cce,
              Json total) {
        if (!out_.is_open()) return;
        Json j;
        j["stage"] = stage;
        j["epoch"] = epoch;
        j["step"] = step_idx;
        j["mse"] = std::move(mse);
        j["cce"] = std::move(cce);
        j["total"] = std::move(total);
        out_ << j.dump() << "\n";
        out_.flush();
    }

    void val(const std::string& stage, std::size_t epoch, const Json& metrics) {
        if (!out_.is_open()) return;
        Json j;
        j["stage"] = stage;
        j["epoch"] = epoch;
        j["val"] = metrics;
        out_ << j.dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
};

}  // namespace cocktail
