#include <random>

#include <gtest/gtest.h>

#include "promptset/fsutil.hpp"
#include "promptset/prompt.hpp"
#include "test_support.hpp"

using namespace promptset;
using Phrases = std::vector<std::string>;

TEST(PromptNotationTest, PaperExamples) {
  EXPECT_EQ(parse_prompt_notation("{figure}"), (Phrases{"figure"}));
  EXPECT_EQ(parse_prompt_notation("{figure - diagram - geometry - sketch}"),
            (Phrases{"figure", "diagram", "geometry", "sketch"}));
  EXPECT_EQ(parse_prompt_notation("{dropcap - decorated letter - large letter}"),
            (Phrases{"dropcap", "decorated letter", "large letter"}));
  // Trailing blank inside the braces, as printed in the HORAE row.
  EXPECT_EQ(parse_prompt_notation("{figure - lanscape - scene - square }"),
            (Phrases{"figure", "lanscape", "scene", "square"}));
}

TEST(PromptNotationTest, NormalizesAndKeepsInnerHyphens) {
  EXPECT_EQ(parse_prompt_notation("  Figure -   Large  Letter "), (Phrases{"figure", "large letter"}));
  EXPECT_EQ(parse_prompt_notation("{semi-circle - x-ray}"), (Phrases{"semi-circle", "x-ray"}));
  EXPECT_EQ(parse_prompt_notation("figure"), (Phrases{"figure"}));
}

TEST(PromptNotationTest, EmptyIsEmptyPromptError) {
  for (const char* text : {"", "{}", "{ - }", "   ", "{ -- }"}) {
    try {
      parse_prompt_notation(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::empty_prompt) << text;
    }
  }
}

TEST(PromptNotationProperty, ParseRenderRoundTrip) {
  std::mt19937_64 rng(4);
  const std::vector<std::string> words{"figure", "large letter", "semi-circle", "x", "decorated  letter", "Photo"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> count(1, 6);
  for (int i = 0; i < 300; ++i) {
    Phrases phrases;
    for (int k = count(rng); k > 0; --k) phrases.push_back(normalize_phrase(words[pick(rng)]));
    ASSERT_EQ(parse_prompt_notation(render_prompt_notation(phrases)), phrases);
  }
}

TEST(CaptionTest, JoinRule) {
  EXPECT_EQ(compile_caption({"c", {"figure"}}), "figure .");
  EXPECT_EQ(compile_caption({"c", {"figure", "diagram"}}), "figure . diagram .");
  EXPECT_EQ(compile_caption({"c", {"image", "square", "rectangle", "photo"}}), "image . square . rectangle . photo .");
}

TEST(CaptionProperty, NoDoubleSeparatorAndTerminated) {
  for (const auto& [id, suite] : builtin_suites()) {
    for (const auto& g : suite.groups) {
      const std::string cap = compile_caption(g);
      EXPECT_EQ(cap.substr(cap.size() - 2), " .") << id;
      EXPECT_EQ(cap.find(". ."), std::string::npos) << id;
      EXPECT_EQ(cap.find("  "), std::string::npos) << id;
    }
  }
}

TEST(BuiltinSuitesTest, MatchPaperGolden) {
  const json golden = parse_json(
      read_file_text(std::filesystem::path(PROMPTSET_SOURCE_DIR) / "tests/golden/paper_prompts.json"), "golden");
  const auto& suites = builtin_suites();
  for (const auto& [id, classes] : golden.items()) {
    ASSERT_TRUE(suites.count(id)) << id;
    const auto& suite = suites.at(id);
    ASSERT_EQ(suite.groups.size(), classes.size()) << id;
    for (const auto& [cls, notation] : classes.items()) {
      const PromptGroup* g = suite.find(cls);
      ASSERT_NE(g, nullptr) << id << "/" << cls;
      EXPECT_EQ(g->phrases, parse_prompt_notation(notation.get<std::string>())) << id << "/" << cls;
      EXPECT_EQ(g->box_threshold, 0.35);
      EXPECT_EQ(g->text_threshold, 0.35);
    }
  }
  // The only extra builtin is the corrected spelling variant.
  EXPECT_EQ(suites.size(), golden.size() + 1);
  EXPECT_EQ(suites.at("horae-v2-landscape").groups.front().phrases,
            (Phrases{"figure", "landscape", "scene", "square"}));
}

TEST(BuiltinSuitesTest, SpecExamples) {
  const auto& s = builtin_suites();
  EXPECT_EQ(s.at("chapbook-v2").groups.at(0).phrases, (Phrases{"image", "square", "rectangle", "photo"}));
  Phrases names;
  for (const auto& g : s.at("horae-classes").groups) names.push_back(g.class_name);
  EXPECT_EQ(names, (Phrases{"Initials", "Decoration", "Miniature"}));
  for (const auto& [id, suite] : s) {
    for (const auto& g : suite.groups) {
      EXPECT_EQ(g.box_threshold, 0.35) << id;
      EXPECT_EQ(g.text_threshold, 0.35) << id;
    }
  }
}

TEST(AliasTest, FixesMisspelling) {
  const PromptSuite fixed = apply_phrase_aliases(builtin_suites().at("horae-v2"));
  EXPECT_EQ(fixed.groups.front().phrases, builtin_suites().at("horae-v2-landscape").groups.front().phrases);
}

TEST(SuiteJsonTest, RoundTripAndPromptForm) {
  for (const auto& [id, suite] : builtin_suites()) EXPECT_EQ(suite_from_json(suite_to_json(suite)), suite) << id;

  const json j = {{"suite_id", "mine"},
                  {"groups", {{{"class_name", "visual_element"}, {"prompt", "{Figure - Woodcut}"}}}}};
  const PromptSuite s = suite_from_json(j);
  EXPECT_EQ(s.groups.front().phrases, (Phrases{"figure", "woodcut"}));
  EXPECT_EQ(s.groups.front().box_threshold, 0.35);
}

TEST(SuiteJsonTest, RejectsMalformed) {
  const std::vector<json> bad{
      json::array(),
      {{"groups", json::array()}},
      {{"groups", {{{"class_name", "a"}, {"phrases", {"x"}}, {"colour", "red"}}}}},
      {{"groups", {{{"class_name", "a"}, {"phrases", {"x"}}, {"prompt", "{x}"}}}}},
      {{"groups", {{{"class_name", "a"}, {"phrases", {"x"}}}, {{"class_name", "a"}, {"phrases", {"y"}}}}}},
      {{"groups", {{{"class_name", "a"}, {"phrases", {"x"}}, {"box_threshold", 1.5}}}}},
      {{"groups", {{{"class_name", "a"}, {"phrases", {"x . y"}}}}}},
      {{"groups", {{{"class_name", "a"}, {"phrases", {"x"}}}}}, {"extra", 1}},
  };
  for (const auto& j : bad) {
    EXPECT_THROW(suite_from_json(j), Error) << j.dump();
  }
}

TEST(ResolveSuiteTest, BuiltinFileOrUsageError) {
  EXPECT_EQ(resolve_suite("sved-v2").suite_id, "sved-v2");
  testsupport::TempDir tmp;
  atomic_write_file(tmp / "s.json", dump_canonical({{"suite_id", "f"}, {"groups", {{{"class_name", "c"}, {"phrases", {"figure"}}}}}}));
  EXPECT_EQ(resolve_suite((tmp / "s.json").string()).suite_id, "f");
  try {
    resolve_suite("no-such-suite");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::usage);
  }
}
