#pragma once

#include <array>
#include <string>
#include <string_view>

namespace capsfield::lightfield {

// Closed label vocabularies carried by every sample. Parsing an unknown
// label throws FormatError.

enum class Expression { neutral, happiness, anger, surprise, sadness, disgust };
enum class Environment { indoor, outdoor };
enum class Distance { close, moderate, far };
enum class Pose { frontal, half_profile, full_profile };
enum class DatasetTag { wild, constrained };
enum class Axis { horizontal, vertical };

/// Reporting groups for recognition results (one per facial variation).
enum class Variation {
  neutral_frontal,
  random_expression,
  half_profile,
  full_profile,
  random_occlusion,
  random_action,
};

inline constexpr std::array kExpressions{Expression::neutral,  Expression::happiness,
                                         Expression::anger,    Expression::surprise,
                                         Expression::sadness,  Expression::disgust};
inline constexpr std::array kEnvironments{Environment::indoor, Environment::outdoor};
inline constexpr std::array kDistances{Distance::close, Distance::moderate, Distance::far};
inline constexpr std::array kPoses{Pose::frontal, Pose::half_profile, Pose::full_profile};
inline constexpr std::array kVariations{Variation::neutral_frontal,  Variation::random_expression,
                                        Variation::half_profile,     Variation::full_profile,
                                        Variation::random_occlusion, Variation::random_action};

std::string_view to_string(Expression v);
std::string_view to_string(Environment v);
std::string_view to_string(Distance v);
std::string_view to_string(Pose v);
std::string_view to_string(DatasetTag v);
std::string_view to_string(Axis v);
std::string_view to_string(Variation v);

/// Column titles used in reports ("Neutral Frontal", "Rand. Exp.", ...).
std::string_view display_name(Variation v);

Expression parse_expression(std::string_view s);
Environment parse_environment(std::string_view s);
Distance parse_distance(std::string_view s);
Pose parse_pose(std::string_view s);
DatasetTag parse_dataset_tag(std::string_view s);
Axis parse_axis(std::string_view s);
Variation parse_variation(std::string_view s);

}  // namespace capsfield::lightfield
