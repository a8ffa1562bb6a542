#pragma once

#include <string>
#include <string_view>

namespace mmreact {

// Evaluates + - * / with parentheses and unary minus over integer and decimal
// literals using exact rational arithmetic. The unicode operators × ÷ − are
// accepted as well.
//
// Terminating decimals are rendered exactly with trailing zeros trimmed;
// other values are rounded half away from zero to 10 significant digits.
//
// Throws Error{parse_error} or Error{division_by_zero}.
std::string eval_math(std::string_view expression);

}  // namespace mmreact
