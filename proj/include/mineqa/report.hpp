#pragma once

#include <string>
#include <vector>

#include "mineqa/evaluation.hpp"

namespace mineqa {

// Strategy display names as they appear in reports ("Baseline", "CoT",
// "Multi-Turn Prompt").
std::string strategy_display_name(StrategyKind kind);

// Rows grouped by model in `backend_order`, strategies ordered baseline,
// cot, multi_turn within each group. Backends missing from the order list
// follow in name order.
std::vector<CellAggregate> order_rows(const std::vector<CellAggregate>& aggregates,
                                      const std::vector<std::string>& backend_order);

// Comma-delimited with quoted fields; header row is exactly
// Model,Method,Accuracy,Score,Improvement. Accuracy and score are rendered
// to one decimal (round half-up), improvements carry a "+" prefix when
// positive, and baseline rows show "-".
std::string render_csv(const std::vector<CellAggregate>& aggregates,
                       const std::vector<std::string>& backend_order);

// Plain-text aligned table, same rows and order as the CSV.
std::string render_table(const std::vector<CellAggregate>& aggregates,
                         const std::vector<std::string>& backend_order);

}  // namespace mineqa
