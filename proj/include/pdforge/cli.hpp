#pragma once

#include "pdforge/pd_trainer.hpp"

#include <string>
#include <vector>

namespace pdforge::cli {

// Runs one subcommand. Exit codes: 0 success, 1 validation/usage error,
// 2 I/O or corruption error.
int dispatch(int argc, const char* const* argv);

// Comparison table for the `report` subcommand.
struct ReportRow {
    std::string name;
    double final_ce = 0.0;
    double perplexity = 0.0;
    double delta_pct = 0.0;  // (base_ce - run_ce) / base_ce * 100
};

std::vector<ReportRow> build_comparison(const std::vector<RunReport>& runs,
                                        std::size_t baseline_index);
std::string comparison_to_csv(const std::vector<ReportRow>& rows);
std::vector<ReportRow> comparison_from_csv(const std::string& csv);

}  // namespace pdforge::cli
