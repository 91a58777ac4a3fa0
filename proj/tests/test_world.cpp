#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

#include "gaterace/track_io.hpp"
#include "gaterace/world.hpp"
#include "oracles.hpp"

using namespace gaterace;

namespace {

Track straight_track() {
  Track t;
  t.name = "straight";
  for (double x : {4.0, 8.0}) {
    Gate g;
    g.center = Vec3(x, 0.0, 1.5);
    t.gates.push_back(g);
  }
  t.start_points.push_back({Vec3(0.0, 0.0, 1.5), 0});
  t.lap_gates = 2;
  t.bounds = default_bounds(t.gates, t.start_points);
  return t;
}

// Minimizes f over a clamped 2-D box by compass search from a grid start.
double surface_min(const std::function<double(double, double)>& f, double u0,
                   double u1, double v0, double v1) {
  const int n = 24;
  double bu = u0, bv = v0, best = f(u0, v0);
  for (int i = 0; i <= n; ++i) {
    for (int j = 0; j <= n; ++j) {
      const double u = u0 + (u1 - u0) * i / n;
      const double v = v0 + (v1 - v0) * j / n;
      const double d = f(u, v);
      if (d < best) {
        best = d;
        bu = u;
        bv = v;
      }
    }
  }
  double su = (u1 - u0) / n, sv = (v1 - v0) / n;
  while (su > 1e-12 || sv > 1e-12) {
    bool improved = false;
    for (auto [du, dv] : {std::pair{su, 0.0}, {-su, 0.0}, {0.0, sv}, {0.0, -sv}}) {
      const double u = std::clamp(bu + du, u0, u1);
      const double v = std::clamp(bv + dv, v0, v1);
      const double d = f(u, v);
      if (d < best) {
        best = d;
        bu = u;
        bv = v;
        improved = true;
      }
    }
    if (!improved) {
      su *= 0.5;
      sv *= 0.5;
    }
  }
  return best;
}

// Distance from p to the surface of a primitive, by search over surface
// parameterizations (valid for points outside the primitive).
double surface_distance(const Primitive& prim, const Vec3& p) {
  const Eigen::AngleAxisd unyaw(-prim.yaw, Vec3::UnitZ());
  const Vec3 q = unyaw * (p - prim.center);
  const Vec3& h = prim.half;
  double best = std::numeric_limits<double>::infinity();
  switch (prim.shape) {
    case Shape::kBox:
      for (int axis = 0; axis < 3; ++axis) {
        const int a = (axis + 1) % 3, b = (axis + 2) % 3;
        for (double side : {-1.0, 1.0}) {
          best = std::min(best, surface_min(
                                    [&](double u, double v) {
                                      Vec3 x;
                                      x[axis] = side * h[axis];
                                      x[a] = u;
                                      x[b] = v;
                                      return (x - q).norm();
                                    },
                                    -h[a], h[a], -h[b], h[b]));
        }
      }
      break;
    case Shape::kCylinder: {
      const double r = h.x(), hz = h.z();
      best = surface_min(
          [&](double th, double z) {
            return (Vec3(r * std::cos(th), r * std::sin(th), z) - q).norm();
          },
          -M_PI, M_PI, -hz, hz);
      for (double side : {-1.0, 1.0}) {
        best = std::min(best, surface_min(
                                  [&](double rr, double th) {
                                    return (Vec3(rr * std::cos(th), rr * std::sin(th),
                                                 side * hz) -
                                            q)
                                        .norm();
                                  },
                                  0.0, r, -M_PI, M_PI));
      }
      break;
    }
    case Shape::kSphere: {
      const double r = h.x();
      best = surface_min(
          [&](double th, double ph) {
            return (r * Vec3(std::sin(ph) * std::cos(th), std::sin(ph) * std::sin(th),
                             std::cos(ph)) -
                    q)
                .norm();
          },
          -M_PI, M_PI, 0.0, M_PI);
      break;
    }
  }
  return best;
}

double d_col_oracle(const Vec3& p, double radius, const Scene& scene) {
  double d = kNoCollisionSentinel;
  for (const Primitive& prim : scene.primitives()) {
    d = std::min(d, surface_distance(prim, p) - radius);
  }
  if (const auto& b = scene.track().bounds) {
    for (int k = 0; k < 3; ++k) {
      d = std::min(d, p[k] - b->lo[k] - radius);
      d = std::min(d, b->hi[k] - p[k] - radius);
    }
  }
  return std::max(d, 0.0);
}

bool inside_any(const Scene& scene, const Vec3& p) {
  for (const Primitive& prim : scene.primitives()) {
    if (signed_distance(prim, p) <= 0.0) return true;
  }
  return false;
}

}  // namespace

TEST(SectionCuboid, SpansBothCentersWithMargin) {
  const Aabb box = section_cuboid(Vec3(0, 0, 1), Vec3(4, 0, 1), SectionMargin{1.0, 1.0});
  EXPECT_EQ(box.lo, Vec3(-1, -1, 0));
  EXPECT_EQ(box.hi, Vec3(5, 1, 2));
  for (int i = 0; i <= 100; ++i) {
    EXPECT_TRUE(box.contains(Vec3(0.04 * i, 0, 1)));
  }
}

TEST(SectionCuboid, RandomPairsContainTheirSegment) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  std::uniform_real_distribution<double> f(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Vec3 a(u(rng), u(rng), u(rng));
    const Vec3 b(u(rng), u(rng), u(rng));
    const Aabb box = section_cuboid(a, b, SectionMargin{});
    for (int k = 0; k < 50; ++k) {
      EXPECT_TRUE(box.contains(a + f(rng) * (b - a)));
    }
    EXPECT_TRUE(box.expanded(-0.99).contains(a));
  }
}

TEST(RandomizeTrack, ZeroRangeIsIdentity) {
  const Track t = load_track_by_name("s_shaped");
  std::mt19937_64 rng(1);
  const Track r = randomize_track(t, 0.0, 0.0, rng);
  for (std::size_t i = 0; i < t.gates.size(); ++i) {
    EXPECT_EQ(r.gates[i].center, t.gates[i].center);
  }
}

TEST(RandomizeTrack, PerturbationsStayInRangeAndKeepYaw) {
  const Track t = load_track_by_name("circle_3d");
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Track r = randomize_track(t, 1.0, 0.3, rng);
    for (std::size_t i = 0; i < t.gates.size(); ++i) {
      const Vec3 d = r.gates[i].center - t.gates[i].center;
      EXPECT_LE(std::abs(d.x()), 1.0);
      EXPECT_LE(std::abs(d.y()), 1.0);
      EXPECT_LE(std::abs(d.z()), 0.3);
      EXPECT_EQ(r.gates[i].yaw, t.gates[i].yaw);
    }
  }
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(randomize_track(t, 1.0, 0.3, a).gates[2].center,
            randomize_track(t, 1.0, 0.3, b).gates[2].center);
  EXPECT_THROW(randomize_track(t, -1.0, 0.0, a), std::invalid_argument);
}

TEST(GatePassed, BasicCases) {
  Gate g;
  g.center = Vec3(4, 0, 1.5);
  EXPECT_TRUE(gate_passed(Vec3(3.9, 0, 1.5), Vec3(4.1, 0, 1.5), g));
  EXPECT_FALSE(gate_passed(Vec3(4.1, 0, 1.5), Vec3(3.9, 0, 1.5), g));
  EXPECT_FALSE(gate_passed(Vec3(3.9, 2.5, 1.5), Vec3(4.1, 2.5, 1.5), g));
  EXPECT_FALSE(gate_passed(Vec3(3.0, 0, 1.5), Vec3(3.9, 0, 1.5), g));
}

TEST(GatePassed, MatchesPlaneClipOracle) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI);
  int positives = 0;
  for (int i = 0; i < 1000; ++i) {
    Gate g;
    g.center = Vec3(u(rng), u(rng), 2.0 + u(rng));
    g.yaw = yaw(rng);
    const Vec3 a = g.center + Vec3(u(rng), u(rng), u(rng));
    const Vec3 b = g.center + Vec3(u(rng), u(rng), u(rng));
    const bool expected = oracle::gate_passed(a, b, g);
    positives += expected;
    EXPECT_EQ(gate_passed(a, b, g), expected) << i;
  }
  EXPECT_GT(positives, 20);
}

TEST(Collision, EmptySceneFarFromBoundsGivesSentinel) {
  Track t = straight_track();
  t.bounds.reset();
  t.gates[0].center = Vec3(500, 0, 1.5);
  t.gates[1].center = Vec3(600, 0, 1.5);
  const Scene s(t, {}, 0, 0);
  EXPECT_GE(distance_to_nearest_collision(Vec3(0, 0, 1.5), kDroneRadius, s), 100.0);
}

TEST(Collision, SphereArithmetic) {
  Track t = straight_track();
  t.bounds.reset();
  t.gates[0].center = Vec3(500, 0, 1.5);
  t.gates[1].center = Vec3(600, 0, 1.5);
  Obstacle o;
  o.shape = Shape::kSphere;
  o.position = Vec3(1.0, 0, 1.5);
  o.half_extents = Vec3::Constant(0.3);
  const Scene s(t, {o}, 0, 1);
  EXPECT_NEAR(distance_to_nearest_collision(Vec3(0, 0, 1.5), 0.15, s), 0.55, 1e-12);
}

TEST(Collision, LipschitzOnRandomPairs) {
  const Track t = load_track_by_name("s_shaped");
  const Scene s = generate_obstacles(t, 3, t.shapes, 4);
  std::mt19937_64 rng(8);
  const Aabb b = *t.bounds;
  std::uniform_real_distribution<double> ux(b.lo.x(), b.hi.x()), uy(b.lo.y(), b.hi.y()),
      uz(b.lo.z(), b.hi.z()), step(-0.5, 0.5);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p(ux(rng), uy(rng), uz(rng));
    const Vec3 q = p + Vec3(step(rng), step(rng), step(rng));
    const double dp = distance_to_nearest_collision(p, kDroneRadius, s);
    const double dq = distance_to_nearest_collision(q, kDroneRadius, s);
    EXPECT_LE(std::abs(dp - dq), (p - q).norm() + 1e-12);
  }
}

TEST(Collision, MatchesSurfaceSearchOracle) {
  const Track t = load_track_by_name("s_shaped");
  std::mt19937_64 rng(23);
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Scene s = generate_obstacles(t, 3, t.shapes, seed);
    const Aabb b = *t.bounds;
    std::uniform_real_distribution<double> ux(b.lo.x(), b.hi.x()),
        uy(b.lo.y(), b.hi.y()), uz(b.lo.z(), b.hi.z());
    for (int i = 0; i < 10; ++i) {
      Vec3 p(ux(rng), uy(rng), uz(rng));
      if (inside_any(s, p)) continue;
      ++checked;
      EXPECT_NEAR(distance_to_nearest_collision(p, kDroneRadius, s),
                  d_col_oracle(p, kDroneRadius, s), 1e-6);
    }
  }
  EXPECT_GT(checked, 20);
}

TEST(Traversability, EmptySceneIsTraversable) {
  const Track t = load_track_by_name("mini");
  EXPECT_TRUE(traversable(Scene(t, {}, 0, 0)));
}

TEST(Traversability, SealingWallBlocksTheGate) {
  const Track t = load_track_by_name("mini");
  const Aabb sec = section_cuboid(t.start_points[0].position, t.gates[0].center, t.margin);
  Obstacle wall;
  wall.shape = Shape::kBox;
  wall.position = Vec3(2.0, sec.center().y(), sec.center().z());
  wall.half_extents = Vec3(0.2, 50.0, 50.0);
  const Scene blocked(t, {wall}, 0, 1);
  EXPECT_FALSE(start_traversable(blocked, t.start_points[0]));
  EXPECT_FALSE(traversable(blocked));
}

TEST(Generator, DensityZeroIsEmpty) {
  const Track t = load_track_by_name("j_shaped");
  const Scene s = generate_obstacles(t, 0, t.shapes, 3);
  EXPECT_TRUE(s.obstacles().empty());
  EXPECT_TRUE(traversable(s));
  EXPECT_THROW(generate_obstacles(t, 9, t.shapes, 3), std::invalid_argument);
}

TEST(Generator, SceneInvariantsHold) {
  const Track t = load_track_by_name("s_shaped");
  const auto sections = track_sections(t);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    const Scene s = generate_obstacles(t, 3, t.shapes, seed);
    EXPECT_EQ(s.obstacles().size(), 3 * sections.size());
    for (const Obstacle& o : s.obstacles()) {
      const auto it = std::find_if(sections.begin(), sections.end(),
                                   [&](const Section& sec) { return sec.gate_index == o.section; });
      ASSERT_NE(it, sections.end());
      EXPECT_TRUE(it->box.expanded(1e-9).contains(o.primitive().bounds()));
      for (const StartPoint& sp : t.start_points) {
        EXPECT_GE((o.position - sp.position).norm(), kStartSafetyMargin);
      }
    }
    EXPECT_TRUE(traversable(s));
  }
}

TEST(Generator, SeedsAreReproducibleAndDistinct) {
  const Track t = load_track_by_name("mini");
  EXPECT_EQ(generate_obstacles(t, 3, t.shapes, 42).hash(),
            generate_obstacles(t, 3, t.shapes, 42).hash());
  std::set<std::uint64_t> hashes;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    hashes.insert(generate_obstacles(t, 2, t.shapes, seed).hash());
  }
  EXPECT_EQ(hashes.size(), 100u);
}

TEST(Generator, ImpossibleShapesReportInfeasibleDensity) {
  Track t = load_track_by_name("mini");
  ShapeSpec huge;
  huge.box = {1.0, 2.5, 3.0};
  huge.cylinder = {0.0, 0.1, 0.2};
  huge.sphere = {0.0, 0.1, 0.2};
  EXPECT_THROW(generate_obstacles(t, 4, huge, 1), InfeasibleDensity);
}

TEST(TrackIo, ShippedTracksValidateAndRoundTrip) {
  for (const char* name : {"mini", "s_shaped", "j_shaped", "circle_3d"}) {
    const Track t = load_track_by_name(name);
    EXPECT_NO_THROW(t.validate()) << name;
    const Track back = track_from_json(track_to_json(t));
    ASSERT_EQ(back.gates.size(), t.gates.size());
    for (std::size_t i = 0; i < t.gates.size(); ++i) {
      EXPECT_EQ(back.gates[i].center, t.gates[i].center);
      EXPECT_EQ(back.gates[i].yaw, t.gates[i].yaw);
    }
    EXPECT_EQ(back.closed, t.closed);
    EXPECT_EQ(back.lap_gates, t.lap_gates);
  }
  const Track t = load_track_by_name("s_shaped");
  const Scene s = generate_obstacles(t, 2, t.shapes, 5);
  EXPECT_EQ(scene_from_json(scene_to_json(s)).hash(), s.hash());
}

TEST(TrackIo, InvalidTracksAreRejected) {
  Track t = straight_track();
  t.gates.pop_back();
  EXPECT_THROW(t.validate(), std::invalid_argument);
  Track same = straight_track();
  same.gates[1].center = same.gates[0].center;
  EXPECT_THROW(same.validate(), std::invalid_argument);
}
