#include "mmattack/labeling.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include "mmattack/deskset.hpp"
#include "mmattack/labeling_http.hpp"

using namespace mmattack;
namespace fs = std::filesystem;

namespace {

McInstance sample_instance() {
  auto ds = make_desk_dataset(DeskSetSpec{3, 0, 42, 8});
  return ds.mc[1];
}

TEST(ExtractOptionLetter, HandlesCommonReplyShapes) {
  EXPECT_EQ(extract_option_letter("B"), 1);
  EXPECT_EQ(extract_option_letter("The answer is (C)."), 2);
  EXPECT_EQ(extract_option_letter("a"), 0);
  EXPECT_EQ(extract_option_letter("I would pick option b here"), 1);
  EXPECT_EQ(extract_option_letter("Answer: C"), 2);
  EXPECT_EQ(extract_option_letter("(a) looks right"), 0);
}

TEST(ExtractOptionLetter, IgnoresLettersInsideWords) {
  // No standalone a/b/c anywhere: "cat" etc. do not count.
  EXPECT_EQ(extract_option_letter("the cat sat on the mat"), std::nullopt);
  EXPECT_EQ(extract_option_letter(""), std::nullopt);
  // The first standalone wins even if later ones differ.
  EXPECT_EQ(extract_option_letter("b, not c"), 1);
}

TEST(MockLabeling, UsesCleanArgmax) {
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  LabelRecord rec = mock_pseudo_label(inst, victim);
  auto scores = victim.option_scores(inst.image, inst.query, inst.options);
  int best = 0;
  for (int o = 1; o < 3; ++o)
    if (scores[o] > scores[best]) best = o;
  EXPECT_EQ(rec.pseudo_label, best);
  EXPECT_EQ(rec.source, LabelSource::mock);
  EXPECT_FALSE(rec.verified);
  // Idempotent.
  EXPECT_EQ(mock_pseudo_label(inst, victim), rec);
}

TEST(MockLabeling, RequestRoutesToMockWhenOffline) {
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  LabelerEndpoint ep;
  ep.offline_mock = true;
  LabelRecord rec = request_pseudo_label(inst, ep, victim);
  EXPECT_EQ(rec.source, LabelSource::mock);
}

class EndpointTest : public ::testing::Test {
protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      ++hits_;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      if (hits_ <= fail_first_) {
        res.status = 500;
        res.set_content("overloaded", "text/plain");
        return;
      }
      res.set_content(reply_, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  LabelerEndpoint endpoint() {
    LabelerEndpoint ep;
    ep.offline_mock = false;
    ep.base_url = "http://127.0.0.1:" + std::to_string(port_);
    ep.retry_delay_ms = 10;
    ep.api_key_env = "MMATTACK_TEST_KEY";
    return ep;
  }

  static std::string content_reply(const std::string& content) {
    json j{{"choices", json::array({json{{"message", json{{"content", content}}}}})}};
    return j.dump();
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  int fail_first_ = 0;
  std::string reply_ = content_reply("The answer is (C).");
  std::string last_body_;
  std::string last_auth_;
};

TEST_F(EndpointTest, ParsesLetterFromReply) {
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  LabelRecord rec = request_pseudo_label(inst, endpoint(), victim);
  EXPECT_EQ(rec.pseudo_label, 2);
  EXPECT_EQ(rec.source, LabelSource::endpoint);

  // The wire shape: model, one user message carrying query and options,
  // temperature 0.
  json body = json::parse(last_body_);
  EXPECT_EQ(body.at("model"), "gpt-4o");
  EXPECT_EQ(body.at("temperature"), 0);
  std::string content = body.at("messages").at(0).at("content").get<std::string>();
  EXPECT_NE(content.find(inst.query.text), std::string::npos);
  EXPECT_NE(content.find(inst.options[2]), std::string::npos);
}

TEST_F(EndpointTest, SendsBearerTokenFromEnvironment) {
  ::setenv("MMATTACK_TEST_KEY", "sk-desk-test", 1);
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  request_pseudo_label(inst, endpoint(), victim);
  EXPECT_EQ(last_auth_, "Bearer sk-desk-test");
  ::unsetenv("MMATTACK_TEST_KEY");
}

TEST_F(EndpointTest, RetriesTransientFailures) {
  fail_first_ = 2;
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  LabelRecord rec = request_pseudo_label(inst, endpoint(), victim);
  EXPECT_EQ(rec.pseudo_label, 2);
  EXPECT_EQ(hits_.load(), 3);
}

TEST_F(EndpointTest, GivesUpAfterMaxRetries) {
  fail_first_ = 100;
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  try {
    request_pseudo_label(inst, endpoint(), victim);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("3 attempts"), std::string::npos);
  }
  EXPECT_EQ(hits_.load(), 3);
}

TEST_F(EndpointTest, UnparseableReplyCarriesRawText) {
  reply_ = content_reply("I am not sure about this one.");
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  try {
    request_pseudo_label(inst, endpoint(), victim);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("I am not sure"), std::string::npos);
  }
}

TEST_F(EndpointTest, MalformedEnvelopeFailsFast) {
  reply_ = "{\"unexpected\": true}";
  McInstance inst = sample_instance();
  ToyVictim victim(ToyVictimParams::init(7));
  EXPECT_THROW(request_pseudo_label(inst, endpoint(), victim), ParseError);
  EXPECT_EQ(hits_.load(), 1);
}

class OverridesTest : public ::testing::Test {
protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("mmattack-ovr-" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    records_ = {{"mc-000", 0, LabelSource::mock, false},
                {"mc-001", 1, LabelSource::mock, false},
                {"mc-002", 2, LabelSource::mock, false}};
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const json& j) {
    fs::path p = dir_ / "overrides.json";
    std::ofstream out(p);
    out << j.dump();
    return p;
  }

  fs::path dir_;
  std::vector<LabelRecord> records_;
};

TEST_F(OverridesTest, EmptyOverridesChangeNothing) {
  auto before = records_;
  auto warnings = merge_manual_overrides(records_, write(json::object()));
  EXPECT_TRUE(warnings.empty());
  EXPECT_EQ(records_, before);
}

TEST_F(OverridesTest, SingleOverrideUpdatesExactlyOneRecord) {
  auto warnings = merge_manual_overrides(records_, write(json{{"mc-001", 2}}));
  EXPECT_TRUE(warnings.empty());
  EXPECT_EQ(records_[1].pseudo_label, 2);
  EXPECT_EQ(records_[1].source, LabelSource::manual);
  EXPECT_TRUE(records_[1].verified);
  EXPECT_EQ(records_[0].source, LabelSource::mock);
  EXPECT_EQ(records_[2].source, LabelSource::mock);
}

TEST_F(OverridesTest, OverrideEqualToExistingStillMarksManualVerified) {
  auto warnings = merge_manual_overrides(records_, write(json{{"mc-002", 2}}));
  EXPECT_TRUE(warnings.empty());
  EXPECT_EQ(records_[2].pseudo_label, 2);
  EXPECT_EQ(records_[2].source, LabelSource::manual);
  EXPECT_TRUE(records_[2].verified);
}

TEST_F(OverridesTest, UnknownIdWarnsAndIsIgnored) {
  auto warnings = merge_manual_overrides(records_, write(json{{"mc-999", 1}}));
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("mc-999"), std::string::npos);
  for (const auto& r : records_) EXPECT_EQ(r.source, LabelSource::mock);
}

TEST_F(OverridesTest, OutOfRangeOverrideThrows) {
  EXPECT_THROW(merge_manual_overrides(records_, write(json{{"mc-001", 5}})), ValidationError);
}

TEST(SelectIncorrectTarget, NeverReturnsThePseudoLabel) {
  for (int pseudo = 0; pseudo < 3; ++pseudo) {
    SplitRng rng = derive_rng(42, "target-" + std::to_string(pseudo));
    for (int i = 0; i < 200; ++i) EXPECT_NE(select_incorrect_target(pseudo, rng), pseudo);
  }
}

TEST(SelectIncorrectTarget, UniformOverTheTwoAlternatives) {
  SplitRng rng = derive_rng(42, "target-dist");
  int count1 = 0, count2 = 0;
  for (int i = 0; i < 10000; ++i) {
    int t = select_incorrect_target(0, rng);
    if (t == 1) ++count1;
    if (t == 2) ++count2;
  }
  EXPECT_EQ(count1 + count2, 10000);
  EXPECT_GE(count1, 4500);
  EXPECT_LE(count1, 5500);
}

TEST(SelectIncorrectTarget, DeterministicPerStream) {
  SplitRng a = derive_rng(42, "inst-9").derive("target");
  SplitRng b = derive_rng(42, "inst-9").derive("target");
  EXPECT_EQ(select_incorrect_target(1, a), select_incorrect_target(1, b));
}

TEST(LabelsFile, SaveLoadRoundTrip) {
  fs::path p = fs::temp_directory_path() / "mmattack-labels-test.jsonl";
  std::vector<LabelRecord> records{{"mc-000", 0, LabelSource::mock, false},
                                   {"mc-001", 2, LabelSource::manual, true},
                                   {"mc-002", 1, LabelSource::endpoint, false}};
  save_labels(records, p);
  EXPECT_EQ(load_labels(p), records);
  fs::remove(p);
}

}  // namespace
