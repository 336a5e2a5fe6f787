#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace pico {

struct TrainingLogRow {
    std::size_t step = 0;
    double loss = 0;
    double lr = 0;
};

struct TrainingLog {
    std::string loss_name = "loss";
    std::uint64_t seed = 0;
    std::vector<TrainingLogRow> rows;

    void write_csv(std::ostream& out) const {
        out << "step," << loss_name << ",lr\n";
        out.precision(10);
        for (const auto& r : rows) out << r.step << ',' << r.loss << ',' << r.lr << '\n';
    }
};

} // namespace pico
