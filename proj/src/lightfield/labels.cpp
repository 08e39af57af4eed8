#include "capsfield/lightfield/labels.hpp"

#include <utility>

#include "capsfield/errors.hpp"

namespace capsfield::lightfield {

namespace {

template <typename E, std::size_t N>
using Table = std::array<std::pair<E, std::string_view>, N>;

constexpr Table<Expression, 6> kExpressionNames{{{Expression::neutral, "neutral"},
                                                 {Expression::happiness, "happiness"},
                                                 {Expression::anger, "anger"},
                                                 {Expression::surprise, "surprise"},
                                                 {Expression::sadness, "sadness"},
                                                 {Expression::disgust, "disgust"}}};
constexpr Table<Environment, 2> kEnvironmentNames{
    {{Environment::indoor, "indoor"}, {Environment::outdoor, "outdoor"}}};
constexpr Table<Distance, 3> kDistanceNames{
    {{Distance::close, "close"}, {Distance::moderate, "moderate"}, {Distance::far, "far"}}};
constexpr Table<Pose, 3> kPoseNames{{{Pose::frontal, "frontal"},
                                     {Pose::half_profile, "half_profile"},
                                     {Pose::full_profile, "full_profile"}}};
constexpr Table<DatasetTag, 2> kDatasetNames{
    {{DatasetTag::wild, "wild"}, {DatasetTag::constrained, "constrained"}}};
constexpr Table<Axis, 2> kAxisNames{{{Axis::horizontal, "horizontal"}, {Axis::vertical, "vertical"}}};
constexpr Table<Variation, 6> kVariationNames{{{Variation::neutral_frontal, "neutral_frontal"},
                                               {Variation::random_expression, "random_expression"},
                                               {Variation::half_profile, "half_profile"},
                                               {Variation::full_profile, "full_profile"},
                                               {Variation::random_occlusion, "random_occlusion"},
                                               {Variation::random_action, "random_action"}}};
constexpr Table<Variation, 6> kVariationTitles{{{Variation::neutral_frontal, "Neutral Frontal"},
                                                {Variation::random_expression, "Rand. Exp."},
                                                {Variation::half_profile, "Half-Profile"},
                                                {Variation::full_profile, "Full-Profile"},
                                                {Variation::random_occlusion, "Rand. Occlus."},
                                                {Variation::random_action, "Rand. Action"}}};

template <typename E, std::size_t N>
std::string_view name_of(const Table<E, N>& table, E value) {
  for (const auto& [v, name] : table)
    if (v == value) return name;
  return "?";
}

template <typename E, std::size_t N>
E parse(const Table<E, N>& table, std::string_view s, const char* kind) {
  for (const auto& [v, name] : table)
    if (name == s) return v;
  throw FormatError(std::string("unknown ") + kind + " label '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(Expression v) { return name_of(kExpressionNames, v); }
std::string_view to_string(Environment v) { return name_of(kEnvironmentNames, v); }
std::string_view to_string(Distance v) { return name_of(kDistanceNames, v); }
std::string_view to_string(Pose v) { return name_of(kPoseNames, v); }
std::string_view to_string(DatasetTag v) { return name_of(kDatasetNames, v); }
std::string_view to_string(Axis v) { return name_of(kAxisNames, v); }
std::string_view to_string(Variation v) { return name_of(kVariationNames, v); }
std::string_view display_name(Variation v) { return name_of(kVariationTitles, v); }

Expression parse_expression(std::string_view s) { return parse(kExpressionNames, s, "expression"); }
Environment parse_environment(std::string_view s) {
  return parse(kEnvironmentNames, s, "environment");
}
Distance parse_distance(std::string_view s) { return parse(kDistanceNames, s, "distance"); }
Pose parse_pose(std::string_view s) { return parse(kPoseNames, s, "pose"); }
DatasetTag parse_dataset_tag(std::string_view s) { return parse(kDatasetNames, s, "dataset"); }
Axis parse_axis(std::string_view s) { return parse(kAxisNames, s, "axis"); }
Variation parse_variation(std::string_view s) { return parse(kVariationNames, s, "variation"); }

}  // namespace capsfield::lightfield
