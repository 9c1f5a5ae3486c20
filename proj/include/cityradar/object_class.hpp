#pragma once

#include <array>
#include <cstddef>
#include <string_view>

namespace cityradar {

/// Detector class order; also the ConfMaps channel order.
enum class ObjectClass : int { pedestrian = 0, cyclist = 1, car = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ObjectClass, kNumClasses> kObjectClasses{
    ObjectClass::pedestrian, ObjectClass::cyclist, ObjectClass::car};

constexpr std::size_t index_of(ObjectClass c) { return static_cast<std::size_t>(c); }

std::string_view to_string(ObjectClass c);

/// Throws ParseError for unknown names.
ObjectClass object_class_from_string(std::string_view name);

}  // namespace cityradar
