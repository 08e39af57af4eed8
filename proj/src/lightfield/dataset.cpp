#include "capsfield/lightfield/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "capsfield/errors.hpp"
#include "capsfield/numerics/parallel.hpp"
#include "capsfield/numerics/rng.hpp"
#include "capsfield/numerics/tensor_io.hpp"

namespace capsfield::lightfield {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::pair<Occluder, std::string_view>, 7> kOccluderNames{{
    {Occluder::random, "random"},
    {Occluder::eye_hand, "eye_hand"},
    {Occluder::mouth_hand, "mouth_hand"},
    {Occluder::glasses, "glasses"},
    {Occluder::sunglasses, "sunglasses"},
    {Occluder::mask, "mask"},
    {Occluder::hat, "hat"},
}};
constexpr std::array<std::pair<FacialAction, std::string_view>, 3> kActionNames{{
    {FacialAction::random, "random"},
    {FacialAction::closed_eyes, "closed_eyes"},
    {FacialAction::open_mouth, "open_mouth"},
}};

template <typename E, std::size_t N>
std::string_view name_in(const std::array<std::pair<E, std::string_view>, N>& table, E v) {
  for (const auto& [e, name] : table)
    if (e == v) return name;
  return "?";
}

template <typename E, std::size_t N>
E parse_in(const std::array<std::pair<E, std::string_view>, N>& table, std::string_view s,
           const char* kind) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  throw FormatError(std::string("unknown ") + kind + " label '" + std::string(s) + "'");
}

std::string sample_id(DatasetTag tag, int subject, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%03d-%04zu", tag == DatasetTag::wild ? 'w' : 'c', subject, index);
  return buf;
}

std::string view_file(std::size_t r, std::size_t c) {
  return "view_" + std::to_string(r) + "_" + std::to_string(c) + ".cft";
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  return it == j.end() ? fallback : it->template get<T>();
}

json scene_to_json(const SceneSpec& s) {
  return json{{"appearance_seed", s.appearance_seed},
              {"disparity_h", s.disparity_h},
              {"disparity_v", s.disparity_v},
              {"noise_sigma", s.noise_sigma},
              {"pitch", s.pitch},
              {"yaw", s.yaw},
              {"occluder", name_in(kOccluderNames, s.occluder)},
              {"action_kind", name_in(kActionNames, s.action_kind)},
              {"illumination", s.illumination}};
}

json entry_to_json(const ManifestEntry& e) {
  const auto& m = e.meta;
  return json{{"id", m.sample_id},
              {"subject", m.subject},
              {"expression", to_string(m.expression)},
              {"environment", to_string(m.environment)},
              {"distance", to_string(m.distance)},
              {"pose", to_string(m.pose)},
              {"occlusion", m.occlusion},
              {"action", m.action},
              {"dataset", to_string(m.dataset)},
              {"variation", to_string(m.variation)},
              {"seed", e.seed},
              {"directory", e.directory},
              {"scene", scene_to_json(e.scene)}};
}

ManifestEntry entry_from_json(const json& j, const Manifest& m) {
  ManifestEntry e;
  auto& meta = e.meta;
  meta.sample_id = j.at("id").get<std::string>();
  meta.subject = j.at("subject").get<int>();
  meta.expression = parse_expression(j.at("expression").get<std::string>());
  meta.environment = parse_environment(j.at("environment").get<std::string>());
  meta.distance = parse_distance(j.at("distance").get<std::string>());
  meta.pose = parse_pose(j.at("pose").get<std::string>());
  meta.occlusion = j.at("occlusion").get<bool>();
  meta.action = j.at("action").get<bool>();
  meta.dataset = parse_dataset_tag(j.at("dataset").get<std::string>());
  meta.variation = parse_variation(j.at("variation").get<std::string>());
  e.seed = j.at("seed").get<std::uint64_t>();
  e.directory = j.at("directory").get<std::string>();

  const json& s = j.at("scene");
  SceneSpec& sc = e.scene;
  sc.subject = meta.subject;
  sc.appearance_seed = s.at("appearance_seed").get<std::uint64_t>();
  sc.disparity_h = s.at("disparity_h").get<double>();
  sc.disparity_v = s.at("disparity_v").get<double>();
  sc.noise_sigma = s.at("noise_sigma").get<double>();
  sc.pitch = s.at("pitch").get<int>();
  sc.yaw = s.at("yaw").get<int>();
  sc.occluder = parse_in(kOccluderNames, s.at("occluder").get<std::string>(), "occluder");
  sc.action_kind = parse_in(kActionNames, s.at("action_kind").get<std::string>(), "action");
  sc.illumination = s.at("illumination").get<double>();
  sc.views = m.views;
  sc.height = m.height;
  sc.width = m.width;
  sc.channels = m.channels;
  sc.expression = meta.expression;
  sc.environment = meta.environment;
  sc.distance = meta.distance;
  sc.pose = meta.pose;
  sc.occlusion = meta.occlusion;
  sc.action = meta.action;
  sc.dataset = meta.dataset;
  sc.variation = meta.variation;
  return e;
}

/// Shared fields of every planned sample.
struct Planner {
  const DatasetRecipe& recipe;
  std::uint64_t data_root;
  Manifest& out;

  double subject_offset(int subject) const {
    const double step = recipe.subject_disparity_step * static_cast<double>(subject - 1);
    if (recipe.subject_disparity_jitter == 0.0) return step;
    numerics::Rng rng(numerics::derive_seed(numerics::derive_seed(recipe.roster_seed, "disparity"),
                                            static_cast<std::uint64_t>(subject)));
    return step + rng.uniform(-recipe.subject_disparity_jitter, recipe.subject_disparity_jitter);
  }

  SceneSpec base_scene(int subject, Distance distance) const {
    SceneSpec s;
    s.subject = subject;
    s.appearance_seed = numerics::derive_seed(numerics::derive_seed(recipe.roster_seed, "subject"),
                                              static_cast<std::uint64_t>(subject));
    const double d = recipe.disparity[static_cast<std::size_t>(distance)] + subject_offset(subject);
    s.disparity_h = d;
    s.disparity_v = d * recipe.vertical_disparity_ratio;
    s.views = recipe.views;
    s.height = recipe.height;
    s.width = recipe.width;
    s.channels = recipe.channels;
    s.noise_sigma = recipe.noise_sigma;
    s.distance = distance;
    s.dataset = recipe.dataset;
    return s;
  }

  void add(SceneSpec scene, int subject, std::size_t index) {
    ManifestEntry e;
    e.meta.sample_id = sample_id(recipe.dataset, subject, index);
    e.meta.subject = subject;
    e.meta.expression = scene.expression;
    e.meta.environment = scene.environment;
    e.meta.distance = scene.distance;
    e.meta.pose = scene.pose;
    e.meta.occlusion = scene.occlusion;
    e.meta.action = scene.action;
    e.meta.dataset = scene.dataset;
    e.meta.variation = scene.variation;
    e.seed = numerics::derive_seed(data_root, e.meta.sample_id);
    e.directory = e.meta.sample_id;
    scene.validate();
    e.scene = std::move(scene);
    out.entries.push_back(std::move(e));
  }
};

void plan_wild(Planner& p, numerics::Rng& rng) {
  const DatasetRecipe& r = p.recipe;
  const std::vector<Environment> envs =
      r.environments.empty() ? std::vector<Environment>(kEnvironments.begin(), kEnvironments.end())
                             : r.environments;
  const std::vector<Distance> dists =
      r.distances.empty() ? std::vector<Distance>(kDistances.begin(), kDistances.end()) : r.distances;
  const std::vector<Variation> vars =
      r.variations.empty() ? std::vector<Variation>(kVariations.begin(), kVariations.end())
                           : r.variations;

  for (int subject = r.first_subject; subject < r.first_subject + r.subjects; ++subject) {
    std::size_t index = 0;
    for (Environment env : envs)
      for (Distance dist : dists)
        for (Variation var : vars)
          for (std::size_t rep = 0; rep < r.samples_per_cell; ++rep) {
            SceneSpec s = p.base_scene(subject, dist);
            s.environment = env;
            s.variation = var;
            const std::size_t cycle = static_cast<std::size_t>(subject) + index;
            switch (var) {
              case Variation::neutral_frontal: break;
              case Variation::random_expression: break;
              case Variation::half_profile: s.pose = Pose::half_profile; break;
              case Variation::full_profile: s.pose = Pose::full_profile; break;
              case Variation::random_occlusion: s.occlusion = true; break;
              case Variation::random_action: s.action = true; break;
            }
            if (var == Variation::random_expression) {
              const std::size_t pick = r.expression_policy == ExpressionPolicy::paper
                                           ? rng.index(kExpressions.size() - 1)
                                           : cycle % (kExpressions.size() - 1);
              s.expression = kExpressions[1 + pick];
            } else if (var != Variation::neutral_frontal &&
                       r.expression_policy == ExpressionPolicy::balanced) {
              s.expression = kExpressions[cycle % kExpressions.size()];
            }
            p.add(std::move(s), subject, index++);
          }
  }
}

void plan_constrained(Planner& p) {
  using Shot = std::function<void(SceneSpec&)>;
  const auto expression = [](Expression e) { return Shot([e](SceneSpec& s) { s.expression = e; }); };
  const auto action = [](FacialAction a) {
    return Shot([a](SceneSpec& s) { s.action = true; s.action_kind = a; });
  };
  const auto pose = [](Pose pose, int yaw, int pitch) {
    return Shot([=](SceneSpec& s) {
      s.pose = pose;
      s.yaw = yaw;
      s.pitch = pitch;
    });
  };
  const auto light = [](double gain) { return Shot([gain](SceneSpec& s) { s.illumination = gain; }); };
  const auto occluder = [](Occluder o) {
    return Shot([o](SceneSpec& s) {
      s.occlusion = true;
      s.occluder = o;
    });
  };
  const std::vector<std::pair<Variation, Shot>> session{
      {Variation::neutral_frontal, [](SceneSpec&) {}},
      {Variation::random_expression, expression(Expression::happiness)},
      {Variation::random_expression, expression(Expression::anger)},
      {Variation::random_expression, expression(Expression::surprise)},
      {Variation::random_action, action(FacialAction::closed_eyes)},
      {Variation::random_action, action(FacialAction::open_mouth)},
      // Looking up / down have no yaw; they are reported with the half profiles.
      {Variation::half_profile, pose(Pose::frontal, 0, -1)},
      {Variation::half_profile, pose(Pose::frontal, 0, 1)},
      {Variation::half_profile, pose(Pose::half_profile, 1, 0)},
      {Variation::full_profile, pose(Pose::full_profile, 1, 0)},
      {Variation::half_profile, pose(Pose::half_profile, -1, 0)},
      {Variation::full_profile, pose(Pose::full_profile, -1, 0)},
      {Variation::neutral_frontal, light(0.6)},
      {Variation::neutral_frontal, light(1.3)},
      {Variation::random_occlusion, occluder(Occluder::eye_hand)},
      {Variation::random_occlusion, occluder(Occluder::mouth_hand)},
      {Variation::random_occlusion, occluder(Occluder::glasses)},
      {Variation::random_occlusion, occluder(Occluder::sunglasses)},
      {Variation::random_occlusion, occluder(Occluder::mask)},
      {Variation::random_occlusion, occluder(Occluder::hat)},
  };
  const DatasetRecipe& r = p.recipe;
  for (int subject = r.first_subject; subject < r.first_subject + r.subjects; ++subject) {
    std::size_t index = 0;
    for (std::size_t rep = 0; rep < r.samples_per_cell; ++rep)
      for (const auto& [variation, shot] : session) {
        SceneSpec s = p.base_scene(subject, Distance::close);
        s.environment = Environment::indoor;
        s.variation = variation;
        shot(s);
        p.add(std::move(s), subject, index++);
      }
  }
}

void check_unique_ids(const Manifest& m) {
  std::set<std::string_view> seen;
  for (const auto& e : m.entries)
    if (!seen.insert(e.meta.sample_id).second)
      throw FormatError("duplicate sample id '" + e.meta.sample_id + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void DatasetRecipe::validate() const {
  if (subjects < 1) throw ConfigError("recipe needs at least one subject");
  if (first_subject < 1) throw ConfigError("subject ids start at 1");
  if (samples_per_cell < 1) throw ConfigError("samples_per_cell must be at least 1");
  if (views == 0 || views % 2 == 0) throw ConfigError("views per side must be odd");
  if (subject_disparity_jitter < 0.0) throw ConfigError("subject_disparity_jitter must be >= 0");
  if (!std::isfinite(subject_disparity_step))
    throw ConfigError("subject_disparity_step must be finite");
  if (!std::isfinite(vertical_disparity_ratio))
    throw ConfigError("vertical_disparity_ratio must be finite");
  if (subjects + first_subject > 1000) throw ConfigError("subject ids must stay below 1000");
  SceneSpec probe;
  probe.views = views;
  probe.height = height;
  probe.width = width;
  probe.channels = channels;
  probe.noise_sigma = noise_sigma;
  for (double d : disparity) {
    const double last_step = subject_disparity_step * static_cast<double>(first_subject + subjects - 2);
    const double worst = std::max(std::abs(d), std::abs(d + last_step)) + subject_disparity_jitter;
    probe.disparity_h = worst;
    probe.disparity_v = worst * vertical_disparity_ratio;
    probe.validate();
  }
}

DatasetRecipe parse_recipe(std::string_view json_text) {
  DatasetRecipe r;
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) throw ConfigError("recipe must be a JSON object");
    static const std::set<std::string> known{
        "name", "dataset", "subjects", "first_subject", "samples_per_cell", "views", "height",
        "width", "channels", "noise_sigma", "disparity", "subject_disparity_jitter",
        "subject_disparity_step", "vertical_disparity_ratio", "expression_policy", "roster_seed", "environments",
        "distances", "variations"};
    for (const auto& [key, _] : j.items())
      if (!known.contains(key)) throw ConfigError("unknown recipe field '" + key + "'");
    r.name = get_or<std::string>(j, "name", r.name);
    if (j.contains("dataset")) r.dataset = parse_dataset_tag(j["dataset"].get<std::string>());
    r.subjects = get_or(j, "subjects", r.subjects);
    r.first_subject = get_or(j, "first_subject", r.first_subject);
    r.samples_per_cell = get_or(j, "samples_per_cell", r.samples_per_cell);
    r.views = get_or(j, "views", r.views);
    r.height = get_or(j, "height", r.height);
    r.width = get_or(j, "width", r.width);
    r.channels = get_or(j, "channels", r.channels);
    r.noise_sigma = get_or(j, "noise_sigma", r.noise_sigma);
    if (j.contains("disparity")) {
      const json& d = j["disparity"];
      if (d.is_number()) {
        r.disparity.fill(d.get<double>());
      } else {
        for (Distance dist : kDistances)
          r.disparity[static_cast<std::size_t>(dist)] =
              get_or(d, std::string(to_string(dist)).c_str(), r.disparity[static_cast<std::size_t>(dist)]);
      }
    }
    r.subject_disparity_jitter = get_or(j, "subject_disparity_jitter", r.subject_disparity_jitter);
    r.subject_disparity_step = get_or(j, "subject_disparity_step", r.subject_disparity_step);
    r.vertical_disparity_ratio = get_or(j, "vertical_disparity_ratio", r.vertical_disparity_ratio);
    if (j.contains("expression_policy")) {
      const auto p = j["expression_policy"].get<std::string>();
      if (p == "paper") r.expression_policy = ExpressionPolicy::paper;
      else if (p == "balanced") r.expression_policy = ExpressionPolicy::balanced;
      else throw ConfigError("expression_policy must be 'paper' or 'balanced'");
    }
    r.roster_seed = get_or(j, "roster_seed", r.roster_seed);
    for (const auto& v : get_or(j, "environments", json::array()))
      r.environments.push_back(parse_environment(v.get<std::string>()));
    for (const auto& v : get_or(j, "distances", json::array()))
      r.distances.push_back(parse_distance(v.get<std::string>()));
    for (const auto& v : get_or(j, "variations", json::array()))
      r.variations.push_back(parse_variation(v.get<std::string>()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid recipe: ") + e.what());
  } catch (const FormatError& e) {
    throw ConfigError(std::string("invalid recipe: ") + e.what());
  }
  r.validate();
  return r;
}

DatasetRecipe load_recipe(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw ConfigError("recipe file not found: " + path.string());
  try {
    return parse_recipe(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string recipe_to_json(const DatasetRecipe& r) {
  json j{{"name", r.name},
         {"dataset", to_string(r.dataset)},
         {"subjects", r.subjects},
         {"first_subject", r.first_subject},
         {"samples_per_cell", r.samples_per_cell},
         {"views", r.views},
         {"height", r.height},
         {"width", r.width},
         {"channels", r.channels},
         {"noise_sigma", r.noise_sigma},
         {"disparity", {{"close", r.disparity[0]}, {"moderate", r.disparity[1]}, {"far", r.disparity[2]}}},
         {"subject_disparity_jitter", r.subject_disparity_jitter},
         {"subject_disparity_step", r.subject_disparity_step},
         {"vertical_disparity_ratio", r.vertical_disparity_ratio},
         {"expression_policy", r.expression_policy == ExpressionPolicy::paper ? "paper" : "balanced"},
         {"roster_seed", r.roster_seed}};
  auto names = [](const auto& values) {
    json a = json::array();
    for (auto v : values) a.push_back(to_string(v));
    return a;
  };
  if (!r.environments.empty()) j["environments"] = names(r.environments);
  if (!r.distances.empty()) j["distances"] = names(r.distances);
  if (!r.variations.empty()) j["variations"] = names(r.variations);
  return j.dump();
}

const ManifestEntry& Manifest::find(std::string_view sample_id) const {
  for (const auto& e : entries)
    if (e.meta.sample_id == sample_id) return e;
  throw CompatibilityError("sample '" + std::string(sample_id) + "' not in manifest");
}

std::vector<int> Manifest::subjects() const {
  std::set<int> s;
  for (const auto& e : entries) s.insert(e.meta.subject);
  return {s.begin(), s.end()};
}

Manifest plan_dataset(const DatasetRecipe& recipe, std::uint64_t seed) {
  recipe.validate();
  Manifest m;
  m.name = recipe.name;
  m.dataset = recipe.dataset;
  m.seed = seed;
  m.views = recipe.views;
  m.height = recipe.height;
  m.width = recipe.width;
  m.channels = recipe.channels;
  m.recipe_json = recipe_to_json(recipe);
  Planner planner{recipe, numerics::derive_seed(seed, "data"), m};
  numerics::Rng rng(seed, "plan");
  if (recipe.dataset == DatasetTag::wild) plan_wild(planner, rng);
  else plan_constrained(planner);
  check_unique_ids(m);
  return m;
}

Manifest generate_dataset(const DatasetRecipe& recipe, std::uint64_t seed, const fs::path& root,
                          std::size_t jobs) {
  Manifest m = plan_dataset(recipe, seed);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec || !fs::is_directory(root))
    throw ConfigError("cannot create dataset directory '" + root.string() + "'");
  numerics::parallel_for(m.entries.size(), jobs, [&](std::size_t i) {
    const ManifestEntry& e = m.entries[i];
    const fs::path dir = root / e.directory;
    std::error_code dir_ec;
    fs::create_directories(dir, dir_ec);
    if (dir_ec) throw ConfigError("cannot create '" + dir.string() + "'");
    const SAArray lf = render_sample(e);
    for (std::size_t r = 0; r < lf.side(); ++r)
      for (std::size_t c = 0; c < lf.side(); ++c)
        numerics::save_tensor(dir / view_file(r, c), lf.view(r, c).to_tensor());
  });
  m.root = root;
  save_manifest(m, root / "manifest.json");
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json samples = json::array();
  for (const auto& e : m.entries) samples.push_back(entry_to_json(e));
  json j{{"format", kManifestFormat},
         {"name", m.name},
         {"dataset", to_string(m.dataset)},
         {"seed", m.seed},
         {"views", m.views},
         {"height", m.height},
         {"width", m.width},
         {"channels", m.channels},
         {"recipe", json::parse(m.recipe_json.empty() ? "{}" : m.recipe_json)},
         {"samples", std::move(samples)}};
  return j.dump(1);
}

Manifest parse_manifest(std::string_view json_text) {
  Manifest m;
  try {
    const json j = json::parse(json_text);
    if (get_or<std::string>(j, "format", "") != kManifestFormat)
      throw FormatError("not a capsfield manifest (format tag missing or unsupported)");
    m.name = j.at("name").get<std::string>();
    m.dataset = parse_dataset_tag(j.at("dataset").get<std::string>());
    m.seed = j.at("seed").get<std::uint64_t>();
    m.views = j.at("views").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.width = j.at("width").get<std::size_t>();
    m.channels = j.at("channels").get<std::size_t>();
    m.recipe_json = j.at("recipe").dump();
    for (const auto& s : j.at("samples")) m.entries.push_back(entry_from_json(s, m));
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt manifest: ") + e.what());
  }
  check_unique_ids(m);
  return m;
}

void save_manifest(const Manifest& m, const fs::path& path) {
  check_unique_ids(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write manifest '" + path.string() + "'");
  out << manifest_to_json(m) << '\n';
  if (!out) throw ConfigError("failed writing manifest '" + path.string() + "'");
}

Manifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  if (!fs::is_regular_file(file)) throw FormatError("manifest not found: " + file.string());
  Manifest m = parse_manifest(read_file(file));
  m.root = file.parent_path();
  return m;
}

SAArray load_sample(const Manifest& m, const ManifestEntry& e) {
  const fs::path dir = m.root / e.directory;
  if (!fs::is_directory(dir)) throw FormatError("sample directory missing: " + dir.string());
  std::size_t files = 0;
  for (const auto& item : fs::directory_iterator(dir)) {
    const std::string name = item.path().filename().string();
    if (name.starts_with("view_") && name.ends_with(".cft")) ++files;
  }
  if (files != m.views * m.views)
    throw FormatError("sample '" + e.meta.sample_id + "': manifest says V=" + std::to_string(m.views) +
                      " (" + std::to_string(m.views * m.views) + " views) but the directory holds " +
                      std::to_string(files) + " view files");
  const numerics::Shape expected{m.channels, m.height, m.width};
  std::vector<SubApertureImage> views;
  views.reserve(files);
  for (std::size_t r = 0; r < m.views; ++r)
    for (std::size_t c = 0; c < m.views; ++c) {
      const fs::path file = dir / view_file(r, c);
      if (!fs::is_regular_file(file)) throw FormatError("missing view file " + file.string());
      const numerics::Tensor t = numerics::load_tensor(file);
      if (t.shape() != expected)
        throw FormatError(file.string() + ": view is " + numerics::to_string(t.shape()) +
                          ", manifest expects " + numerics::to_string(expected));
      try {
        views.push_back(SubApertureImage::from_tensor(t));
      } catch (const ConfigError& err) {
        throw FormatError(file.string() + ": " + err.what());
      }
    }
  return SAArray(m.views, std::move(views), e.meta);
}

SAArray render_sample(const ManifestEntry& e) {
  SAArray lf = synth_generate(e.scene, e.seed);
  return SAArray(lf.side(), lf.views(), e.meta);
}

SAArray fetch_sample(const Manifest& m, const ManifestEntry& e) {
  return m.root.empty() ? render_sample(e) : load_sample(m, e);
}

}  // namespace capsfield::lightfield
