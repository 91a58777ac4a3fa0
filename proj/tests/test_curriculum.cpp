#include <gtest/gtest.h>

#include <set>

#include "gaterace/curriculum.hpp"
#include "gaterace/track_io.hpp"

using namespace gaterace;

namespace {

std::deque<bool> window_with(int successes, int total) {
  std::deque<bool> d;
  for (int i = 0; i < total; ++i) d.push_back(i < successes);
  return d;
}

}  // namespace

TEST(Stage, LevelsFollowTheSchedule) {
  const CurriculumStage l1 = stage_config(1);
  EXPECT_EQ(l1.density, 0);
  EXPECT_TRUE(l1.vd_penalty_enabled);
  const CurriculumStage l2 = stage_config(2);
  EXPECT_GT(l2.density, 0);
  EXPECT_EQ(l2.v_d, l1.v_d);
  const CurriculumStage l3 = stage_config(3);
  EXPECT_FALSE(l3.vd_penalty_enabled);
  EXPECT_EQ(l3.v_d, 10.0);
  EXPECT_GT(l3.density, l2.density);
  EXPECT_GT(l3.gate_xy_range, l2.gate_xy_range);
  EXPECT_THROW(stage_config(4), std::invalid_argument);
  CurriculumStage bad = l1;
  bad.density = 2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Stage, AdvancementRule) {
  const CurriculumStage st = stage_config(1);
  EXPECT_FALSE(should_advance(window_with(0, 100), st));
  EXPECT_TRUE(should_advance(window_with(100, 100), st));
  EXPECT_TRUE(should_advance(window_with(85, 100), st));
  EXPECT_TRUE(should_advance(window_with(80, 100), st));
  EXPECT_FALSE(should_advance(window_with(79, 100), st));
  EXPECT_FALSE(should_advance(window_with(99, 99), st));
}

TEST(Scenes, GroupsOfTen) {
  const Track t = load_track_by_name("mini");
  std::mt19937_64 rng(1);
  const SceneAssignment a = assign_scenes(100, 10, stage_config(1), t, rng);
  EXPECT_EQ(a.scenes.size(), 10u);
  EXPECT_EQ(a.distinct_hashes(), 10u);
  for (int s : a.group_sizes()) EXPECT_EQ(s, 10);
  for (int e = 0; e < 100; ++e) {
    EXPECT_GE(a.group_of_env[e], 0);
    EXPECT_LT(a.group_of_env[e], 10);
  }
}

TEST(Scenes, DegenerateAndUnevenAssignments) {
  const Track t = load_track_by_name("mini");
  std::mt19937_64 rng(2);
  const SceneAssignment one = assign_scenes(16, 1, stage_config(1), t, rng);
  EXPECT_EQ(one.group_sizes(), std::vector<int>{16});
  const SceneAssignment each = assign_scenes(12, 12, stage_config(1), t, rng);
  EXPECT_EQ(each.distinct_hashes(), 12u);
  const SceneAssignment uneven = assign_scenes(23, 5, stage_config(1), t, rng);
  const auto sizes = uneven.group_sizes();
  EXPECT_LE(*std::max_element(sizes.begin(), sizes.end()) -
                *std::min_element(sizes.begin(), sizes.end()),
            1);
  EXPECT_THROW(assign_scenes(4, 5, stage_config(1), t, rng), std::invalid_argument);
}

TEST(Scenes, RefreshChangesScenesNotGroups) {
  const Track t = load_track_by_name("mini");
  std::mt19937_64 rng(3);
  SceneAssignment a = assign_scenes(20, 4, stage_config(1), t, rng);
  std::set<std::uint64_t> seen;
  for (const ScenePtr& s : a.scenes) seen.insert(s->hash());
  for (int k = 0; k < 20; ++k) {
    const SceneAssignment b = refresh(a, stage_config(1), t, rng);
    EXPECT_EQ(b.group_of_env, a.group_of_env);
    for (const ScenePtr& s : b.scenes) EXPECT_TRUE(seen.insert(s->hash()).second);
    a = b;
  }
  const SceneAssignment dense = refresh(a, stage_config(2), t, rng);
  for (const ScenePtr& s : dense.scenes) {
    EXPECT_EQ(s->density(), stage_config(2).density);
    EXPECT_EQ(s->obstacles().size(),
              static_cast<std::size_t>(stage_config(2).density) * track_sections(t).size());
  }
}

TEST(Scenes, SameSeedReplays) {
  const Track t = load_track_by_name("s_shaped");
  std::mt19937_64 a(11), b(11);
  const SceneAssignment x = assign_scenes(10, 5, stage_config(2), t, a);
  const SceneAssignment y = assign_scenes(10, 5, stage_config(2), t, b);
  EXPECT_EQ(x.seeds, y.seeds);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(x.scenes[i]->hash(), y.scenes[i]->hash());
}

TEST(Controller, AdvancesAndRampsSpeed) {
  CurriculumController c;
  EXPECT_EQ(c.stage().level, 1);
  for (int i = 0; i < 99; ++i) c.record_episode(true);
  EXPECT_FALSE(c.maybe_advance(10));
  c.record_episode(true);
  EXPECT_TRUE(c.maybe_advance(20));
  EXPECT_EQ(c.stage().level, 2);
  EXPECT_EQ(c.window_success_rate(), 0.0);
  for (int i = 0; i < 100; ++i) c.record_episode(i % 10 != 0);
  EXPECT_TRUE(c.maybe_advance(30));
  EXPECT_EQ(c.stage().level, 3);
  EXPECT_EQ(c.stage().v_d, 4.0);
  int level = 3;
  std::vector<double> speeds{c.stage().v_d};
  for (int round = 0; round < 10; ++round) {
    for (int i = 0; i < 100; ++i) c.record_episode(true);
    c.maybe_advance(40 + round);
    EXPECT_GE(c.stage().level, level);
    level = c.stage().level;
    speeds.push_back(c.stage().v_d);
  }
  EXPECT_TRUE(std::is_sorted(speeds.begin(), speeds.end()));
  EXPECT_EQ(speeds.back(), 10.0);
  EXPECT_EQ(c.events().size(), 2u + 6u);
}

TEST(Controller, OneStepStartsAtTheFinalLevel) {
  CurriculumSchedule s;
  s.one_step = true;
  CurriculumController c(s);
  EXPECT_EQ(c.stage().level, 3);
  EXPECT_EQ(c.stage().v_d, 10.0);
  EXPECT_EQ(c.stage().density, s.level3_density);
}

TEST(Controller, JsonRoundTrip) {
  CurriculumController c;
  for (int i = 0; i < 100; ++i) c.record_episode(true);
  c.maybe_advance(512);
  for (int i = 0; i < 7; ++i) c.record_episode(i % 2 == 0);
  CurriculumController d;
  d.load_json(c.to_json());
  EXPECT_EQ(d.to_json(), c.to_json());
  EXPECT_EQ(d.stage().level, 2);
  EXPECT_DOUBLE_EQ(d.window_success_rate(), 4.0 / 7.0);
}
