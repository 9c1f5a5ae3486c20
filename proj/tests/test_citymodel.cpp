#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cityradar/citymodel.hpp"
#include "cityradar/errors.hpp"
#include "support.hpp"

using namespace cityradar;

namespace {

constexpr double kPi = std::numbers::pi;

SemanticObject quad(const std::string& id, const std::string& cls, Eigen::Vector3d a, Eigen::Vector3d b,
                    Eigen::Vector3d c, Eigen::Vector3d d) {
  return {id, cls, 2, {Triangle{a, b, c}, Triangle{a, c, d}}, {}};
}

// Wall facing the sensor at x = distance, spanning y, z in [-20, 20].
SemanticObject wall_at(double distance, const std::string& id = "wall") {
  return quad(id, "building", {distance, -20, -20}, {distance, 20, -20}, {distance, 20, 20}, {distance, -20, 20});
}

SemanticObject ground_strip(const std::string& id, const std::string& cls, double x0, double x1, double y0,
                            double y1) {
  return quad(id, cls, {x0, y0, 0}, {x1, y0, 0}, {x1, y1, 0}, {x0, y1, 0});
}

// Odd dimensions put a pixel centre exactly on the optical axis.
CameraIntrinsics odd_camera() { return {65, 33, 120.0, 40.0}; }

}  // namespace

TEST(CityModelParse, MinimalDocument) {
  const std::string doc = R"(<?xml version="1.0"?>
<cityModel>
  <cityObject id="b1" class="building" lod="2">
    <attribute name="height">12</attribute>
    <posList>0 0 0 1 0 0 0 1 0</posList>
  </cityObject>
</cityModel>)";
  const CityModel m = parse_city_model(doc, CityFormat::gml_lite);
  ASSERT_EQ(m.objects.size(), 1u);
  EXPECT_EQ(m.objects[0].class_label, "building");
  EXPECT_EQ(m.objects[0].lod, 2);
  ASSERT_EQ(m.triangle_count(), 1u);
  EXPECT_EQ(m.objects[0].mesh[0][1], Eigen::Vector3d(1, 0, 0));
  EXPECT_EQ(m.objects[0].attributes.at("height"), "12");
}

TEST(CityModelParse, EmptyModelIsValid) {
  EXPECT_TRUE(parse_city_model("<cityModel/>", CityFormat::gml_lite).objects.empty());
  EXPECT_TRUE(parse_city_model(R"({"cityObjects": []})", CityFormat::json).objects.empty());
}

TEST(CityModelParse, PosListArityErrorNamesObject) {
  const std::string doc =
      R"(<cityModel><cityObject id="lane_7" class="driving_lane" lod="1"><posList>0 0 0 1 0 0 0 1</posList></cityObject></cityModel>)";
  try {
    parse_city_model(doc, CityFormat::gml_lite);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("lane_7"), std::string::npos) << e.what();
  }
}

TEST(CityModelParse, MalformedXmlReportsLine) {
  const std::string doc = "<cityModel>\n<cityObject id=\"a\" class=\"x\" lod=\"1\">\n<posList>1 2</cityObject>";
  try {
    parse_city_model(doc, CityFormat::gml_lite);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_city_model("{\"cityObjects\": [", CityFormat::json), ParseError);
}

TEST(CityModelParse, RejectsDegenerateAndDuplicates) {
  EXPECT_THROW(parse_city_model(
                   R"(<cityModel><cityObject id="d" class="x" lod="1"><posList>0 0 0 1 1 1 2 2 2</posList></cityObject></cityModel>)",
                   CityFormat::gml_lite),
               ParseError);
  EXPECT_THROW(parse_city_model(
                   R"(<cityModel><cityObject id="a" class="x" lod="1"><posList>0 0 0 1 0 0 0 1 0</posList></cityObject>
                      <cityObject id="a" class="y" lod="1"><posList>0 0 0 1 0 0 0 1 0</posList></cityObject></cityModel>)",
                   CityFormat::gml_lite),
               ParseError);
  EXPECT_THROW(parse_city_model(
                   R"(<cityModel><cityObject id="a" class="x" lod="7"><posList>0 0 0 1 0 0 0 1 0</posList></cityObject></cityModel>)",
                   CityFormat::gml_lite),
               ParseError);
}

TEST(CityModelParse, BothFormatsRoundTrip) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  CityModel m;
  for (int k = 0; k < 4; ++k) {
    SemanticObject o{"obj" + std::to_string(k), k % 2 ? "sidewalk" : "building", k % 4, {}, {{"k", "v<&>" + std::to_string(k)}}};
    for (int t = 0; t < 3; ++t) {
      o.mesh.push_back({Eigen::Vector3d(u(rng), u(rng), u(rng)), Eigen::Vector3d(u(rng), u(rng), u(rng)),
                        Eigen::Vector3d(u(rng), u(rng), u(rng))});
    }
    m.objects.push_back(o);
  }
  for (CityFormat f : {CityFormat::gml_lite, CityFormat::json}) {
    const std::string text = write_city_model(m, f);
    const CityModel back = parse_city_model(text, f);
    ASSERT_EQ(back.objects.size(), m.objects.size());
    for (std::size_t k = 0; k < m.objects.size(); ++k) {
      EXPECT_EQ(back.objects[k].id, m.objects[k].id);
      EXPECT_EQ(back.objects[k].attributes, m.objects[k].attributes);
      for (std::size_t t = 0; t < m.objects[k].mesh.size(); ++t) {
        for (int v = 0; v < 3; ++v) EXPECT_EQ(back.objects[k].mesh[t][v], m.objects[k].mesh[t][v]);
      }
    }
    EXPECT_EQ(write_city_model(back, f), text);
  }
}

TEST(CityModelParse, ShippedStreetModelLoads) {
  const CityModel m = load_city_model(testkit::source_path("data/street.gml"));
  const auto classes = m.classes();
  for (const char* c : {"bicycle_lane", "building", "driving_lane", "sidewalk"}) {
    EXPECT_TRUE(std::find(classes.begin(), classes.end(), c) != classes.end()) << c;
  }
}

TEST(Semantics, GroupingCountsAndPartition) {
  CityModel m;
  m.objects = {ground_strip("l1", "driving_lane", 0, 10, 0, 3), ground_strip("l2", "driving_lane", 0, 10, 3, 6),
               ground_strip("s1", "sidewalk", 0, 10, 6, 8)};
  const auto groups = group_by_semantics(m);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups.at("driving_lane").size(), 4u);
  EXPECT_EQ(groups.at("sidewalk").size(), 2u);
  std::size_t total = 0;
  for (const auto& [cls, tris] : groups) total += tris.size();
  EXPECT_EQ(total, m.triangle_count());

  CityModel single;
  single.objects = {ground_strip("a", "sidewalk", 0, 1, 0, 1)};
  EXPECT_EQ(group_by_semantics(single).at("sidewalk"), single.objects[0].mesh);
}

TEST(Raycast, RayPlaneIntersectionMatchesAnalytic) {
  const Triangle tri{Eigen::Vector3d(5, -10, -10), Eigen::Vector3d(5, 10, -10), Eigen::Vector3d(5, 0, 10)};
  const Ray ray{Eigen::Vector3d(1, 0.5, 0.2), Eigen::Vector3d(1, 0.1, 0.05).normalized()};
  const auto t = intersect(ray, tri);
  ASSERT_TRUE(t);
  // Plane x = 5: t = (5 - ox) / dx.
  EXPECT_NEAR(*t, 4.0 / ray.direction.x(), 1e-12);
  EXPECT_FALSE(intersect({ray.origin, -ray.direction}, tri));
}

TEST(Raycast, PerpendicularWallDepth) {
  CityModel m;
  m.objects = {wall_at(10.0)};
  const CameraIntrinsics cam = odd_camera();
  const Sdm sdm = raycast_sdm(m, SensorPose{}, cam);
  const int cv = cam.height / 2, cu = cam.width / 2;
  ASSERT_TRUE(sdm.mask(cv, cu));
  EXPECT_NEAR(sdm.depth(cv, cu), 10.0, 1e-6);
  ASSERT_EQ(sdm.class_names, std::vector<std::string>{"building"});
  EXPECT_EQ(sdm.semantic[0](cv, cu), 1.0);
  // Off-axis pixels see the plane at distance / cos(angle).
  const Ray r = camera_ray(SensorPose{}, cam, 10.5, 20.5);
  EXPECT_NEAR(sdm.depth(20, 10), 10.0 / r.direction.x(), 1e-9);
}

TEST(Raycast, FarWallIsMasked) {
  CityModel m;
  m.objects = {wall_at(40.0)};
  const CameraIntrinsics cam = odd_camera();
  const Sdm sdm = raycast_sdm(m, SensorPose{}, cam);
  EXPECT_FALSE(sdm.mask(cam.height / 2, cam.width / 2));
  EXPECT_EQ(sdm.depth(cam.height / 2, cam.width / 2), 0.0);
  EXPECT_EQ(sdm.semantic[0].sum(), 0.0);
}

TEST(Raycast, EmptyModelAllMasked) {
  const Sdm sdm = raycast_sdm(CityModel{}, SensorPose{}, odd_camera());
  EXPECT_FALSE(sdm.mask.any());
  EXPECT_EQ(sdm.depth.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Raycast, RigidTransformInvariance) {
  CityModel m = load_city_model(testkit::source_path("data/street.gml"));
  const SensorPose pose{Eigen::Vector3d(3, -1.5, 1.0), 1.0, 0.1};
  const CameraIntrinsics cam{48, 24, 120.0, 40.0};
  const Sdm a = raycast_sdm(m, pose, cam);

  const double yaw = 0.83;
  const Eigen::Matrix3d R = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  const Eigen::Vector3d shift(120.0, -45.0, 3.0);
  CityModel moved = m;
  for (auto& o : moved.objects) {
    for (auto& t : o.mesh) {
      for (auto& v : t) v = R * v + shift;
    }
  }
  const SensorPose moved_pose{R * pose.position + shift, pose.heading + yaw, pose.mount_offset};
  const Sdm b = raycast_sdm(moved, moved_pose, cam);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_LT((a.depth - b.depth).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Raycast, OccluderReducesDepthAndMaskRule) {
  CityModel m;
  m.objects = {wall_at(20.0)};
  const CameraIntrinsics cam = odd_camera();
  const Sdm before = raycast_sdm(m, SensorPose{}, cam);
  m.objects.push_back(quad("post", "pole", {8, -1, -1}, {8, 1, -1}, {8, 1, 1}, {8, -1, 1}));
  const Sdm after = raycast_sdm(m, SensorPose{}, cam);
  const int cv = cam.height / 2, cu = cam.width / 2;
  EXPECT_LT(after.depth(cv, cu), before.depth(cv, cu));
  EXPECT_NEAR(after.depth(cv, cu), 8.0, 1e-9);

  // mask <=> hit within range, everywhere.
  const Sdm limited = raycast_sdm(m, SensorPose{}, cam, 12.0);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      double nearest = std::numeric_limits<double>::infinity();
      const Ray r = camera_ray(SensorPose{}, cam, u + 0.5, v + 0.5);
      for (const auto& o : m.objects) {
        for (const auto& t : o.mesh) {
          if (auto d = intersect(r, t)) nearest = std::min(nearest, *d);
        }
      }
      EXPECT_EQ(limited.mask(v, u), nearest <= 12.0);
      double channel_sum = 0.0;
      for (const auto& s : limited.semantic) channel_sum += s(v, u);
      EXPECT_EQ(channel_sum, limited.mask(v, u) ? 1.0 : 0.0);
    }
  }
}

TEST(Camera, ProjectionInvertsRay) {
  const SensorPose pose{Eigen::Vector3d(1, 2, 1.2), 0.4, 0.1};
  const CameraIntrinsics cam;
  for (double u : {3.5, 100.25, 250.0}) {
    for (double v : {1.0, 96.0, 180.5}) {
      const Ray r = camera_ray(pose, cam, u, v);
      const auto px = project_to_pixel(r.origin + 7.0 * r.direction, pose, cam);
      ASSERT_TRUE(px);
      EXPECT_NEAR(px->x(), u, 1e-9);
      EXPECT_NEAR(px->y(), v, 1e-9);
    }
  }
  EXPECT_FALSE(project_to_pixel(pose.position - Eigen::Vector3d(std::cos(0.4), std::sin(0.4), 0.0), pose, cam));
}

TEST(LaneProjection, ParallelStripTracesArcsine) {
  CityModel m;
  m.objects = {ground_strip("bike", "bicycle_lane", 0, 40, 2.5, 3.5)};
  const SensorPose pose{Eigen::Vector3d::Zero(), 0.0, 0.0};
  const Eigen::VectorXd ra = Eigen::VectorXd::LinSpaced(128, 0.0, 127 * 0.15);
  Eigen::VectorXd az(64);
  for (int j = 0; j < 64; ++j) az[j] = std::asin(2.0 * (j - 32) / 64.0);
  const auto grids = project_lanes_to_ra(m, pose, ra, az);
  ASSERT_EQ(grids.size(), 3u);
  const Eigen::MatrixXd& bike = grids[0];
  for (int i = 0; i < 128; ++i) {
    if (ra[i] < 5.0) continue;
    int best = 0;
    for (int j = 1; j < 64; ++j) {
      if (std::abs(az[j] - std::asin(3.0 / ra[i])) < std::abs(az[best] - std::asin(3.0 / ra[i]))) best = j;
    }
    // The nearest bin lies within the strip whenever the strip is wider than a bin there.
    const double y = ra[i] * std::sin(az[best]);
    if (std::abs(y - 3.0) <= 0.5) {
      EXPECT_EQ(bike(i, best), 1.0) << "range " << ra[i];
    }
  }
  EXPECT_EQ(grids[1].sum(), 0.0);
  EXPECT_EQ(bike.row(0).sum(), 0.0);
}

TEST(LaneProjection, DisjointClassesHaveDisjointSupport) {
  CityModel m;
  m.objects = {ground_strip("s", "sidewalk", 0, 30, -6, -1), ground_strip("d", "driving_lane", 0, 30, 1, 6)};
  const Eigen::VectorXd ra = Eigen::VectorXd::LinSpaced(64, 0.0, 20.0);
  Eigen::VectorXd az(32);
  for (int j = 0; j < 32; ++j) az[j] = std::asin(2.0 * (j - 16) / 32.0);
  const auto grids = project_lanes_to_ra(m, SensorPose{}, ra, az);
  EXPECT_GT(grids[1].sum(), 0.0);
  EXPECT_GT(grids[2].sum(), 0.0);
  EXPECT_EQ(grids[1].cwiseProduct(grids[2]).sum(), 0.0);
}

TEST(SdmWarp, GroundBinsCarryLaneSemantics) {
  const CityModel m = load_city_model(testkit::source_path("data/street.gml"));
  const SensorPose pose{Eigen::Vector3d(0, -1.5, 1.0), kPi / 3, 0.1};
  const CameraIntrinsics cam;
  const Eigen::VectorXd ra = Eigen::VectorXd::LinSpaced(64, 0.0, 63 * 0.29);
  Eigen::VectorXd az(32);
  for (int j = 0; j < 32; ++j) az[j] = std::asin(2.0 * (j - 16) / 32.0);
  const Sdm warped = warp_sdm_to_ra(raycast_sdm(m, pose, cam), pose, cam, ra, az);
  const auto lanes = project_lanes_to_ra(m, pose, ra, az);
  const auto& names = warped.class_names;
  const auto channel = std::find(names.begin(), names.end(), "driving_lane") - names.begin();
  int agree = 0, total = 0;
  for (int i = 0; i < 64; ++i) {
    for (int j = 0; j < 32; ++j) {
      if (!warped.mask(i, j)) continue;
      ++total;
      agree += (warped.semantic[channel](i, j) > 0.5) == (lanes[1](i, j) > 0.5);
    }
  }
  ASSERT_GT(total, 100);
  EXPECT_GT(static_cast<double>(agree) / total, 0.9);
}
