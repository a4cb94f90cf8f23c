#include "mineqa/report.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace mineqa {

std::string strategy_display_name(StrategyKind kind) {
    switch (kind) {
        case StrategyKind::baseline: return "Baseline";
        case StrategyKind::cot: return "CoT";
        case StrategyKind::multi_turn: return "Multi-Turn Prompt";
    }
    return "?";
}

std::vector<CellAggregate> order_rows(const std::vector<CellAggregate>& aggregates,
                                      const std::vector<std::string>& backend_order) {
    std::map<std::string, std::size_t> rank;
    for (std::size_t i = 0; i < backend_order.size(); ++i) {
        rank.emplace(backend_order[i], i);
    }
    auto backend_rank = [&](const std::string& name) {
        auto it = rank.find(name);
        return it != rank.end() ? it->second : rank.size();
    };

    std::vector<CellAggregate> rows = aggregates;
    std::stable_sort(rows.begin(), rows.end(),
                     [&](const CellAggregate& a, const CellAggregate& b) {
                         const auto ra = backend_rank(a.backend_name);
                         const auto rb = backend_rank(b.backend_name);
                         if (ra != rb) return ra < rb;
                         if (a.backend_name != b.backend_name) {
                             return a.backend_name < b.backend_name;
                         }
                         return static_cast<int>(a.strategy) < static_cast<int>(b.strategy);
                     });
    return rows;
}

namespace {

std::string csv_quote(const std::string& field) {
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

struct RenderedRow {
    std::string model, method, accuracy, score, improvement;
};

std::vector<RenderedRow> render_rows(const std::vector<CellAggregate>& aggregates,
                                     const std::vector<std::string>& backend_order) {
    std::vector<RenderedRow> rows;
    for (const auto& cell : order_rows(aggregates, backend_order)) {
        RenderedRow row;
        row.model = cell.backend_name;
        row.method = strategy_display_name(cell.strategy);
        row.accuracy = cell.acc ? format_percent(*cell.acc) : "-";
        row.score = cell.mean_judge_score ? format_score(*cell.mean_judge_score) : "-";
        row.improvement = cell.improvement_pct ? format_improvement(*cell.improvement_pct) : "-";
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace

std::string render_csv(const std::vector<CellAggregate>& aggregates,
                       const std::vector<std::string>& backend_order) {
    std::ostringstream out;
    out << "Model,Method,Accuracy,Score,Improvement\n";
    for (const auto& row : render_rows(aggregates, backend_order)) {
        out << csv_quote(row.model) << ',' << csv_quote(row.method) << ','
            << csv_quote(row.accuracy) << ',' << csv_quote(row.score) << ','
            << csv_quote(row.improvement) << '\n';
    }
    return out.str();
}

std::string render_table(const std::vector<CellAggregate>& aggregates,
                         const std::vector<std::string>& backend_order) {
    const std::vector<std::string> headers = {"Model", "Method", "Accuracy", "Score",
                                              "Improvement"};
    auto rows = render_rows(aggregates, backend_order);

    std::vector<std::size_t> widths(headers.size());
    for (std::size_t i = 0; i < headers.size(); ++i) widths[i] = headers[i].size();
    for (const auto& row : rows) {
        const std::string* fields[] = {&row.model, &row.method, &row.accuracy, &row.score,
                                       &row.improvement};
        for (std::size_t i = 0; i < headers.size(); ++i) {
            widths[i] = std::max(widths[i], fields[i]->size());
        }
    }

    auto pad = [](const std::string& s, std::size_t width) {
        return s + std::string(width - s.size(), ' ');
    };

    std::ostringstream out;
    for (std::size_t i = 0; i < headers.size(); ++i) {
        out << (i + 1 < headers.size() ? pad(headers[i], widths[i]) + "  " : headers[i]);
    }
    out << '\n';
    for (std::size_t i = 0; i < headers.size(); ++i) {
        out << std::string(widths[i], '-') << (i + 1 < headers.size() ? "  " : "");
    }
    out << '\n';
    for (const auto& row : rows) {
        const std::string* fields[] = {&row.model, &row.method, &row.accuracy, &row.score,
                                       &row.improvement};
        for (std::size_t i = 0; i < headers.size(); ++i) {
            out << (i + 1 < headers.size() ? pad(*fields[i], widths[i]) + "  " : *fields[i]);
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace mineqa
