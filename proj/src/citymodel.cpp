#include "cityradar/citymodel.hpp"

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "cityradar/errors.hpp"

namespace cityradar {

namespace {

constexpr double kDegenerateArea = 1e-12;

std::vector<Triangle> triangles_from_coords(const std::vector<double>& coords, const std::string& id) {
  if (coords.size() % 9 != 0) {
    throw ParseError("cityObject '" + id + "': posList has " + std::to_string(coords.size()) +
                     " values, not a multiple of 9");
  }
  std::vector<Triangle> mesh;
  mesh.reserve(coords.size() / 9);
  for (std::size_t i = 0; i < coords.size(); i += 9) {
    Triangle t;
    for (int v = 0; v < 3; ++v) t[v] = {coords[i + 3 * v], coords[i + 3 * v + 1], coords[i + 3 * v + 2]};
    mesh.push_back(t);
  }
  return mesh;
}

std::vector<double> parse_pos_list(std::string_view text, const std::string& id) {
  std::vector<double> values;
  const char* p = text.data();
  const char* end = p + text.size();
  while (true) {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
    if (p >= end) break;
    double v = 0.0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc() || (next < end && !std::isspace(static_cast<unsigned char>(*next)))) {
      throw ParseError("cityObject '" + id + "': invalid number in posList near '" +
                       std::string(p, std::min<std::size_t>(16, end - p)) + "'");
    }
    if (!std::isfinite(v)) throw ParseError("cityObject '" + id + "': non-finite coordinate");
    values.push_back(v);
    p = next;
  }
  return values;
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

CityModel parse_gml_lite(std::string_view document) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    std::istringstream in{std::string(document)};
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError("gml_lite: malformed XML at line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto root = tree.get_child_optional("cityModel");
  if (!root) throw ParseError("gml_lite: missing <cityModel> root element");

  CityModel model;
  std::size_t index = 0;
  for (const auto& [tag, node] : *root) {
    if (tag != "cityObject") continue;
    const std::string where = "gml_lite: <cityObject> #" + std::to_string(index++);
    SemanticObject obj;
    const auto id = node.get_optional<std::string>("<xmlattr>.id");
    if (!id || id->empty()) throw ParseError(where + ": missing id attribute");
    obj.id = *id;
    const auto cls = node.get_optional<std::string>("<xmlattr>.class");
    if (!cls || cls->empty()) throw ParseError(where + " ('" + obj.id + "'): missing class attribute");
    obj.class_label = *cls;
    try {
      obj.lod = node.get<int>("<xmlattr>.lod", 0);
    } catch (const pt::ptree_error&) {
      throw ParseError(where + " ('" + obj.id + "'): lod is not an integer");
    }
    std::vector<double> coords;
    for (const auto& [child_tag, child] : node) {
      if (child_tag == "posList") {
        const auto values = parse_pos_list(child.data(), obj.id);
        if (values.size() % 9 != 0) {
          throw ParseError("cityObject '" + obj.id + "': posList has " + std::to_string(values.size()) +
                           " values, not a multiple of 9");
        }
        coords.insert(coords.end(), values.begin(), values.end());
      } else if (child_tag == "attribute") {
        const auto name = child.get_optional<std::string>("<xmlattr>.name");
        if (!name) throw ParseError(where + " ('" + obj.id + "'): attribute without name");
        obj.attributes[*name] = child.data();
      }
    }
    obj.mesh = triangles_from_coords(coords, obj.id);
    model.objects.push_back(std::move(obj));
  }
  return model;
}

CityModel parse_json(std::string_view document) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(document);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("city model json: ") + e.what());
  }
  CityModel model;
  if (!doc.is_object() || !doc.contains("cityObjects") || !doc["cityObjects"].is_array()) {
    throw ParseError("city model json: expected an object with a 'cityObjects' array");
  }
  std::size_t index = 0;
  for (const auto& node : doc["cityObjects"]) {
    const std::string where = "city model json: cityObjects[" + std::to_string(index++) + "]";
    try {
      SemanticObject obj;
      obj.id = node.at("id").get<std::string>();
      obj.class_label = node.at("class").get<std::string>();
      obj.lod = node.value("lod", 0);
      if (node.contains("attributes")) {
        for (const auto& [k, v] : node["attributes"].items()) obj.attributes[k] = v.get<std::string>();
      }
      const auto coords = node.at("posList").get<std::vector<double>>();
      obj.mesh = triangles_from_coords(coords, obj.id);
      model.objects.push_back(std::move(obj));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return model;
}

}  // namespace

std::vector<std::string> CityModel::classes() const {
  std::set<std::string> s;
  for (const auto& o : objects) s.insert(o.class_label);
  return {s.begin(), s.end()};
}

std::size_t CityModel::triangle_count() const {
  std::size_t n = 0;
  for (const auto& o : objects) n += o.mesh.size();
  return n;
}

double triangle_area(const Triangle& t) { return 0.5 * (t[1] - t[0]).cross(t[2] - t[0]).norm(); }

void CityModel::validate() const {
  std::set<std::string> ids;
  for (const auto& o : objects) {
    if (o.class_label.empty()) throw ParseError("cityObject '" + o.id + "': empty class label");
    if (o.lod < 0 || o.lod > 3) throw ParseError("cityObject '" + o.id + "': lod must be 0..3");
    if (!ids.insert(o.id).second) throw ParseError("duplicate cityObject id '" + o.id + "'");
    for (std::size_t k = 0; k < o.mesh.size(); ++k) {
      if (!(triangle_area(o.mesh[k]) > kDegenerateArea)) {
        throw ParseError("cityObject '" + o.id + "': triangle " + std::to_string(k) + " is degenerate");
      }
    }
  }
}

CityModel parse_city_model(std::string_view document, CityFormat format) {
  CityModel model = format == CityFormat::gml_lite ? parse_gml_lite(document) : parse_json(document);
  model.validate();
  return model;
}

std::string write_city_model(const CityModel& model, CityFormat format) {
  if (format == CityFormat::json) {
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : model.objects) {
      std::vector<double> coords;
      for (const auto& t : o.mesh) {
        for (const auto& v : t) coords.insert(coords.end(), {v.x(), v.y(), v.z()});
      }
      nlohmann::json attrs = nlohmann::json::object();
      for (const auto& [k, v] : o.attributes) attrs[k] = v;
      objects.push_back({{"id", o.id}, {"class", o.class_label}, {"lod", o.lod},
                         {"attributes", attrs}, {"posList", coords}});
    }
    return nlohmann::json{{"cityObjects", objects}}.dump(2) + "\n";
  }
  namespace pt = boost::property_tree;
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<cityModel>\n";
  for (const auto& o : model.objects) {
    os << "  <cityObject id=\"" << pt::xml_parser::encode_char_entities(o.id) << "\" class=\""
       << pt::xml_parser::encode_char_entities(o.class_label) << "\" lod=\"" << o.lod << "\">\n";
    for (const auto& [k, v] : o.attributes) {
      os << "    <attribute name=\"" << pt::xml_parser::encode_char_entities(k) << "\">"
         << pt::xml_parser::encode_char_entities(v) << "</attribute>\n";
    }
    os << "    <posList>";
    bool first = true;
    for (const auto& t : o.mesh) {
      for (const auto& v : t) {
        for (int k = 0; k < 3; ++k) {
          if (!first) os << ' ';
          os << format_double(v[k]);
          first = false;
        }
      }
    }
    os << "</posList>\n  </cityObject>\n";
  }
  os << "</cityModel>\n";
  return os.str();
}

CityModel load_city_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open city model '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const CityFormat fmt = path.extension() == ".json" ? CityFormat::json : CityFormat::gml_lite;
  return parse_city_model(buf.str(), fmt);
}

std::map<std::string, std::vector<Triangle>> group_by_semantics(const CityModel& model) {
  std::map<std::string, std::vector<Triangle>> groups;
  for (const auto& o : model.objects) {
    auto& g = groups[o.class_label];
    g.insert(g.end(), o.mesh.begin(), o.mesh.end());
  }
  return groups;
}

std::optional<double> intersect(const Ray& ray, const Triangle& tri) {
  constexpr double eps = 1e-12;
  const Eigen::Vector3d e1 = tri[1] - tri[0];
  const Eigen::Vector3d e2 = tri[2] - tri[0];
  const Eigen::Vector3d p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < eps) return std::nullopt;
  const double inv = 1.0 / det;
  const Eigen::Vector3d s = ray.origin - tri[0];
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Eigen::Vector3d q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t <= 1e-9) return std::nullopt;
  return t;
}

bool point_in_triangle_xy(const Eigen::Vector2d& p, const Triangle& tri) {
  const Eigen::Vector2d a = tri[0].head<2>(), b = tri[1].head<2>(), c = tri[2].head<2>();
  auto cross = [](const Eigen::Vector2d& u, const Eigen::Vector2d& v) { return u.x() * v.y() - u.y() * v.x(); };
  const double area = cross(b - a, c - a);
  if (std::abs(area) < kDegenerateArea) return false;
  const double d1 = cross(b - a, p - a);
  const double d2 = cross(c - b, p - b);
  const double d3 = cross(a - c, p - c);
  const bool has_neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool has_pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(has_neg && has_pos);
}

namespace {

struct CameraFrame {
  Eigen::Vector3d forward, right, up;
  double fx, fy;
};

CameraFrame camera_frame(const SensorPose& pose, const CameraIntrinsics& cam) {
  constexpr double deg = std::numbers::pi / 180.0;
  CameraFrame f;
  f.forward = {std::cos(pose.heading), std::sin(pose.heading), 0.0};
  f.right = {std::sin(pose.heading), -std::cos(pose.heading), 0.0};
  f.up = Eigen::Vector3d::UnitZ();
  f.fx = 0.5 * cam.width / std::tan(0.5 * cam.horizontal_fov * deg);
  f.fy = 0.5 * cam.height / std::tan(0.5 * cam.vertical_fov * deg);
  return f;
}

}  // namespace

Ray camera_ray(const SensorPose& pose, const CameraIntrinsics& cam, double u, double v) {
  const CameraFrame f = camera_frame(pose, cam);
  const double x = (u - 0.5 * cam.width) / f.fx;
  const double y = (0.5 * cam.height - v) / f.fy;
  return {pose.position, (f.forward + x * f.right + y * f.up).normalized()};
}

std::optional<Eigen::Vector2d> project_to_pixel(const Eigen::Vector3d& point, const SensorPose& pose,
                                                const CameraIntrinsics& cam) {
  const CameraFrame f = camera_frame(pose, cam);
  const Eigen::Vector3d rel = point - pose.position;
  const double z = rel.dot(f.forward);
  if (z <= 1e-9) return std::nullopt;
  return Eigen::Vector2d(0.5 * cam.width + f.fx * rel.dot(f.right) / z,
                         0.5 * cam.height - f.fy * rel.dot(f.up) / z);
}

Sdm raycast_sdm(const CityModel& model, const SensorPose& pose, const CameraIntrinsics& cam,
                double max_range) {
  if (cam.width <= 0 || cam.height <= 0) throw InvalidArgument("raycast_sdm: camera size must be positive");
  Sdm sdm;
  sdm.class_names = model.classes();
  sdm.max_range = max_range;
  const int H = cam.height, W = cam.width;
  sdm.semantic.assign(sdm.class_names.size(), Eigen::MatrixXd::Zero(H, W));
  sdm.depth = Eigen::MatrixXd::Zero(H, W);
  sdm.mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(H, W, false);

  std::vector<std::size_t> channel_of(model.objects.size());
  for (std::size_t k = 0; k < model.objects.size(); ++k) {
    const auto& names = sdm.class_names;
    channel_of[k] = std::lower_bound(names.begin(), names.end(), model.objects[k].class_label) - names.begin();
  }

  for (int v = 0; v < H; ++v) {
    for (int u = 0; u < W; ++u) {
      const Ray ray = camera_ray(pose, cam, u + 0.5, v + 0.5);
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_obj = 0;
      for (std::size_t k = 0; k < model.objects.size(); ++k) {
        for (const Triangle& tri : model.objects[k].mesh) {
          if (auto t = intersect(ray, tri); t && *t < best) {
            best = *t;
            best_obj = k;
          }
        }
      }
      if (best <= max_range) {
        sdm.mask(v, u) = true;
        sdm.depth(v, u) = best;
        sdm.semantic[channel_of[best_obj]](v, u) = 1.0;
      }
    }
  }
  return sdm;
}

Sdm warp_sdm_to_ra(const Sdm& sdm, const SensorPose& pose, const CameraIntrinsics& cam,
                   const Eigen::VectorXd& range_axis, const Eigen::VectorXd& azimuth_axis, double ground_z) {
  if (sdm.rows() != cam.height || sdm.cols() != cam.width) {
    throw InvalidArgument("warp_sdm_to_ra: SDM size does not match the camera");
  }
  const auto R = range_axis.size(), A = azimuth_axis.size();
  Sdm out;
  out.class_names = sdm.class_names;
  out.max_range = sdm.max_range;
  out.semantic.assign(sdm.semantic.size(), Eigen::MatrixXd::Zero(R, A));
  out.depth = Eigen::MatrixXd::Zero(R, A);
  out.mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(R, A, false);
  for (Eigen::Index i = 0; i < R; ++i) {
    for (Eigen::Index j = 0; j < A; ++j) {
      Eigen::Vector3d p = polar_to_world(range_axis[i], azimuth_axis[j], pose);
      p.z() = ground_z;
      const auto px = project_to_pixel(p, pose, cam);
      if (!px) continue;
      const int u = static_cast<int>(std::floor(px->x()));
      const int v = static_cast<int>(std::floor(px->y()));
      if (u < 0 || v < 0 || u >= cam.width || v >= cam.height || !sdm.mask(v, u)) continue;
      out.mask(i, j) = true;
      out.depth(i, j) = sdm.depth(v, u);
      for (std::size_t c = 0; c < sdm.semantic.size(); ++c) out.semantic[c](i, j) = sdm.semantic[c](v, u);
    }
  }
  return out;
}

std::vector<Eigen::MatrixXd> project_lanes_to_ra(const CityModel& model, const SensorPose& pose,
                                                 const Eigen::VectorXd& range_axis,
                                                 const Eigen::VectorXd& azimuth_axis) {
  const auto groups = group_by_semantics(model);
  std::vector<Eigen::MatrixXd> grids;
  for (const std::string& lane : kLaneClasses) {
    Eigen::MatrixXd occ = Eigen::MatrixXd::Zero(range_axis.size(), azimuth_axis.size());
    const auto it = groups.find(lane);
    if (it != groups.end()) {
      for (Eigen::Index i = 0; i < range_axis.size(); ++i) {
        for (Eigen::Index j = 0; j < azimuth_axis.size(); ++j) {
          const Eigen::Vector2d p = polar_to_world(range_axis[i], azimuth_axis[j], pose).head<2>();
          for (const Triangle& tri : it->second) {
            if (point_in_triangle_xy(p, tri)) {
              occ(i, j) = 1.0;
              break;
            }
          }
        }
      }
    }
    grids.push_back(std::move(occ));
  }
  return grids;
}

}  // namespace cityradar
