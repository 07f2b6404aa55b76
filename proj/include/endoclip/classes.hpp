#pragma once

#include <array>
#include <string_view>

namespace endoclip {

inline constexpr int kNumClasses = 7;

/// Label order: index i is class_names[i].
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "nose-right", "nose-left", "ear-right", "ear-left", "vc-open", "vc-closed", "throat"};

/// Case-sensitive lookup; throws LabelError for names outside the set.
int class_index(std::string_view name);
std::string_view class_name(int index);

}  // namespace endoclip
