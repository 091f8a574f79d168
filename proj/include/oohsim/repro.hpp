#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oohsim/cost_model.hpp"

namespace oohsim {

class UnknownFigure : public SimError {
public:
    using SimError::SimError;
};

struct ReferenceValue {
    std::string figure;
    std::string series;
    std::string x;
    double value = 0;
};

/// Parses "<figure> <series> <x> <value>" lines; '#' starts a comment.
std::vector<ReferenceValue> parse_reference(const std::string& text);

/// The reference values embedded at build time.
const std::vector<ReferenceValue>& reference_values();

std::optional<double> reference_value(const std::string& figure, const std::string& series,
                                      const std::string& x);

struct ReproRow {
    std::string figure;
    std::string series;
    std::string x;
    std::optional<double> reference;
    double simulated = 0;

    std::optional<double> rel_error() const;
};

/// table1, table5, fig6, fig8, fig9, coexist.
const std::vector<std::string>& repro_figures();

/// Runs the canned experiment for `figure`. Throws UnknownFigure.
std::vector<ReproRow> run_repro(const std::string& figure, const CostTable& costs);

/// figure,series,x,reference,simulated,rel_error
std::string format_repro_csv(const std::vector<ReproRow>& rows);

}  // namespace oohsim
