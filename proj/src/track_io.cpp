#include "gaterace/track_io.hpp"

#include <fstream>
#include <stdexcept>

namespace gaterace {

namespace {

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const Json& j) {
  if (!j.is_array() || j.size() != 3) {
    throw std::invalid_argument("expected a 3-vector, got " + j.dump());
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kBox:
      return "box";
    case Shape::kCylinder:
      return "cylinder";
    case Shape::kSphere:
      return "sphere";
  }
  return "box";
}

Shape shape_from(const std::string& s) {
  if (s == "box") return Shape::kBox;
  if (s == "cylinder") return Shape::kCylinder;
  if (s == "sphere") return Shape::kSphere;
  throw std::invalid_argument("unknown obstacle shape '" + s + "'");
}

Json range_json(const ShapeRange& r) {
  return {{"weight", r.weight}, {"min", r.min_size}, {"max", r.max_size}};
}

ShapeRange range_from(const Json& j, ShapeRange def) {
  def.weight = j.value("weight", def.weight);
  def.min_size = j.value("min", def.min_size);
  def.max_size = j.value("max", def.max_size);
  return def;
}

}  // namespace

Json quad_params_to_json(const QuadParams& p) {
  return {{"mass", p.m},
          {"inertia", vec_json(p.J)},
          {"arm", p.arm},
          {"f_max", p.f_max},
          {"drag_lin", vec_json(p.drag_lin)},
          {"drag_quad", vec_json(p.drag_quad)},
          {"tau_drag", vec_json(p.tau_drag)},
          {"k_rate", p.k_rate},
          {"yaw_torque_coeff", p.yaw_torque_coeff},
          {"omega_max", p.omega_max},
          {"gravity", vec_json(p.g)}};
}

QuadParams quad_params_from_json(const Json& j) {
  QuadParams p;
  p.m = j.value("mass", p.m);
  if (j.contains("inertia")) p.J = vec_from(j["inertia"]);
  p.arm = j.value("arm", p.arm);
  p.f_max = j.value("f_max", p.f_max);
  if (j.contains("drag_lin")) p.drag_lin = vec_from(j["drag_lin"]);
  if (j.contains("drag_quad")) p.drag_quad = vec_from(j["drag_quad"]);
  if (j.contains("tau_drag")) p.tau_drag = vec_from(j["tau_drag"]);
  p.k_rate = j.value("k_rate", p.k_rate);
  p.yaw_torque_coeff = j.value("yaw_torque_coeff", p.yaw_torque_coeff);
  p.omega_max = j.value("omega_max", p.omega_max);
  if (j.contains("gravity")) p.g = vec_from(j["gravity"]);
  p.validate();
  return p;
}

Json track_to_json(const Track& t) {
  Json gates = Json::array();
  for (const Gate& g : t.gates) {
    gates.push_back({{"center", vec_json(g.center)},
                     {"yaw", g.yaw},
                     {"aperture", {g.aperture.x(), g.aperture.y()}},
                     {"frame_thickness", g.frame_thickness}});
  }
  Json starts = Json::array();
  for (const StartPoint& sp : t.start_points) {
    starts.push_back({{"position", vec_json(sp.position)},
                      {"next_gate", sp.next_gate}});
  }
  Json j = {{"name", t.name},
            {"closed", t.closed},
            {"lap_gates", t.lap_gates},
            {"gates", gates},
            {"start_points", starts},
            {"section_margin",
             {{"lateral", t.margin.lateral}, {"vertical", t.margin.vertical}}},
            {"default_density", t.default_density},
            {"shapes",
             {{"box", range_json(t.shapes.box)},
              {"cylinder", range_json(t.shapes.cylinder)},
              {"sphere", range_json(t.shapes.sphere)}}},
            {"quad", quad_params_to_json(t.quad)}};
  if (t.bounds) {
    j["bounds"] = {{"lo", vec_json(t.bounds->lo)},
                   {"hi", vec_json(t.bounds->hi)}};
  }
  return j;
}

Track track_from_json(const Json& j) {
  Track t;
  t.name = j.value("name", std::string("unnamed"));
  t.closed = j.value("closed", false);
  const Json gate_defaults = j.value("gate_defaults", Json::object());
  for (const Json& g : j.at("gates")) {
    Gate gate;
    gate.center = vec_from(g.at("center"));
    gate.yaw = g.value("yaw", 0.0);
    const Json ap = g.value("aperture", gate_defaults.value(
                                            "aperture", Json::array({0.5, 0.5})));
    gate.aperture = Eigen::Vector2d(ap.at(0).get<double>(), ap.at(1).get<double>());
    gate.frame_thickness = g.value(
        "frame_thickness", gate_defaults.value("frame_thickness", 0.1));
    t.gates.push_back(gate);
  }
  for (const Json& s : j.at("start_points")) {
    t.start_points.push_back(
        {vec_from(s.at("position")), s.at("next_gate").get<int>()});
  }
  t.lap_gates = j.value("lap_gates", static_cast<int>(t.gates.size()));
  if (j.contains("section_margin")) {
    const Json& m = j["section_margin"];
    t.margin.lateral = m.value("lateral", t.margin.lateral);
    t.margin.vertical = m.value("vertical", t.margin.vertical);
  }
  t.default_density = j.value("default_density", t.default_density);
  if (j.contains("shapes")) {
    const Json& s = j["shapes"];
    if (s.contains("box")) t.shapes.box = range_from(s["box"], t.shapes.box);
    if (s.contains("cylinder")) {
      t.shapes.cylinder = range_from(s["cylinder"], t.shapes.cylinder);
    }
    if (s.contains("sphere")) {
      t.shapes.sphere = range_from(s["sphere"], t.shapes.sphere);
    }
  }
  if (j.contains("quad")) t.quad = quad_params_from_json(j["quad"]);
  if (j.contains("bounds")) {
    t.bounds = Aabb{vec_from(j["bounds"].at("lo")), vec_from(j["bounds"].at("hi"))};
  } else if (!t.gates.empty()) {
    t.bounds = default_bounds(t.gates, t.start_points);
  }
  t.validate();
  return t;
}

Json scene_to_json(const Scene& scene) {
  Json obstacles = Json::array();
  for (const Obstacle& o : scene.obstacles()) {
    obstacles.push_back({{"shape", shape_name(o.shape)},
                         {"position", vec_json(o.position)},
                         {"yaw", o.yaw},
                         {"half_extents", vec_json(o.half_extents)},
                         {"section", o.section}});
  }
  return {{"track", track_to_json(scene.track())},
          {"obstacles", obstacles},
          {"seed", scene.seed()},
          {"density", scene.density()},
          {"hash", scene.hash()}};
}

Scene scene_from_json(const Json& j) {
  std::vector<Obstacle> obstacles;
  for (const Json& o : j.at("obstacles")) {
    Obstacle ob;
    ob.shape = shape_from(o.at("shape").get<std::string>());
    ob.position = vec_from(o.at("position"));
    ob.yaw = o.value("yaw", 0.0);
    ob.half_extents = vec_from(o.at("half_extents"));
    ob.section = o.value("section", 0);
    obstacles.push_back(ob);
  }
  return Scene(track_from_json(j.at("track")), std::move(obstacles),
               j.value("seed", std::uint64_t{0}), j.value("density", 0));
}

Json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Json::parse(in);
}

void save_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Track load_track(const std::filesystem::path& path) {
  return track_from_json(load_json(path));
}

std::filesystem::path resolve_track_path(const std::string& name_or_path) {
  const std::filesystem::path p(name_or_path);
  if (std::filesystem::exists(p)) return p;
  const std::filesystem::path shipped =
      std::filesystem::path(GATERACE_DATA_DIR) / "tracks" / (name_or_path + ".json");
  if (std::filesystem::exists(shipped)) return shipped;
  throw std::runtime_error("track not found: " + name_or_path);
}

Track load_track_by_name(const std::string& name_or_path) {
  return load_track(resolve_track_path(name_or_path));
}

}  // namespace gaterace
