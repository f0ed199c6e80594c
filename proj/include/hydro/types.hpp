#pragma once

#include <string>
#include <string_view>

namespace hydro {

/// Binary class label. Hydrocephalus is the positive class everywhere.
enum class Label { normal = 0, hydrocephalus = 1 };

inline constexpr int kNumClasses = 2;

std::string_view to_string(Label label) noexcept;

/// Accepts "normal" and "hydrocephalus"; throws ValidationError otherwise.
Label parse_label(std::string_view text);

}  // namespace hydro
