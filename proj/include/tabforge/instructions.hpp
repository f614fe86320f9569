#pragma once

#include <string_view>

namespace tabforge {

// Default instruction texts. Task manifests may override the classification
// and regression templates; {target} and {options} are interpolated.
inline constexpr std::string_view kMaskThenPredictInstruction =
    "Recover the hidden cells: write each sentinel token followed by the cell it hides.";

inline constexpr std::string_view kImputationInstruction =
    "Predict the missing value at every sentinel position of the table.";

inline constexpr std::string_view kClassificationTemplate =
    "Predict the target class of column \"{target}\" for the row in the table. Options: {options}.";

inline constexpr std::string_view kRegressionTemplate =
    "Predict the target value of column \"{target}\" for the row in the table.";

inline constexpr std::string_view kChainOfThoughtSuffix =
    "Let's think step by step. You need to first give the predicted value in the placeholder of "
    "<missing_value_0>, and then explain your reasons or thoughts.";

}  // namespace tabforge
