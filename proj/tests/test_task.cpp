#include "support.hpp"

#include <gtest/gtest.h>

using namespace scotd;
using namespace scotd::testing;

namespace {

const char* kManifest = R"({"task_id":"t","kind":"multiple_choice","option_keys":["A","b","c"]})";

TEST(TaskManifest, KeysAreNormalizedAndPhraseDefaults) {
    const auto task = parse_task_manifest(kManifest);
    EXPECT_EQ(task.option_keys, (std::vector<std::string>{"a", "b", "c"}));
    EXPECT_EQ(task.answer_phrase, "So the answer is:");
    EXPECT_EQ(task.kind, TaskKind::multiple_choice);
}

TEST(TaskManifest, RejectsBadManifests) {
    EXPECT_THROW(parse_task_manifest("{"), DataError);
    EXPECT_THROW(parse_task_manifest("[]"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"t","kind":"mc","option_keys":["a"]})"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"t","kind":"multiple_choice","option_keys":[]})"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"t","kind":"multiple_choice","option_keys":["a","A"]})"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"t","kind":"multiple_choice","option_keys":["a b"]})"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"t","kind":"binary_classification","option_keys":["a","b","c"]})"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"","kind":"multiple_choice","option_keys":["a"]})"), DataError);
    EXPECT_THROW(parse_task_manifest(R"({"task_id":"t","kind":"multiple_choice","option_keys":["a"],"answer_phrase":"  "})"), DataError);
}

TEST(Instances, ParseAndValidate) {
    const auto task = parse_task_manifest(kManifest);
    const auto insts = parse_instances(
        "{\"id\":\"1\",\"question\":\"q\",\"choices\":{\"A\":\"x\",\"b\":\"y\",\"c\":\"z\"},\"gold\":\"A\"}\n\n"
        "{\"id\":\"2\",\"question\":\"q2\",\"choices\":{\"a\":\"x\",\"b\":\"y\",\"c\":\"z\"}}\n",
        task);
    ASSERT_EQ(insts.size(), 2u);
    EXPECT_EQ(insts[0].gold_label, "a");
    EXPECT_FALSE(insts[1].gold_label);
    EXPECT_EQ(insts[0].task_id, "t");
}

TEST(Instances, ErrorsNameTheLine) {
    const auto task = parse_task_manifest(kManifest);
    try {
        parse_instances("{\"id\":\"1\",\"question\":\"q\",\"choices\":{\"a\":\"x\",\"b\":\"y\",\"c\":\"z\"}}\n"
                        "{\"id\":\"2\",\"question\":\"q\",\"choices\":{\"a\":\"x\",\"b\":\"y\"}}\n",
                        task, "train.jsonl");
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("train.jsonl:2"), std::string::npos) << e.what();
    }
}

TEST(Instances, Rejections) {
    const auto task = parse_task_manifest(kManifest);
    const std::string ok = R"({"id":"1","question":"q","choices":{"a":"x","b":"y","c":"z"}})";
    EXPECT_THROW(parse_instances(ok + "\n" + ok, task), DataError);  // duplicate id
    EXPECT_THROW(parse_instances(R"({"id":"1","question":"q","choices":{"a":"x","b":"y","c":"z"},"gold":"d"})", task), DataError);
    EXPECT_THROW(parse_instances(R"({"id":"1","question":"q","choices":{"a":"x","b":"y","c":"z","d":"w"}})", task), DataError);
    EXPECT_THROW(parse_instances(R"({"id":"1","question":"q","choices":{"a":"x","A":"y","c":"z"}})", task), DataError);
    EXPECT_THROW(parse_instances(R"({"id":"1","question":"q","choices":["x","y","z"]})", task), DataError);
    EXPECT_THROW(parse_instances(R"({"id":"1","choices":{"a":"x","b":"y","c":"z"}})", task), DataError);
    EXPECT_THROW(parse_instances("not json", task), DataError);
}

TEST(Instances, RoundTripIsCanonical) {
    const auto task = mc_task();
    const auto insts = make_instances(task, 25, 3);
    const auto text = serialize_instances(insts);
    EXPECT_EQ(parse_instances(text, task), insts);
    EXPECT_EQ(serialize_instances(parse_instances(text, task)), text);
}

TEST(Instances, MutationFuzzNeverCrashes) {
    const auto task = mc_task();
    const auto text = serialize_instances(make_instances(task, 4, 5));
    detail::Rng rng(11);
    for (int iter = 0; iter < 3000; ++iter) {
        auto mutated = text;
        const auto edits = 1 + rng.below(4);
        for (std::size_t e = 0; e < edits; ++e) {
            const auto pos = rng.below(mutated.size());
            switch (rng.below(3)) {
                case 0: mutated[pos] = static_cast<char>(rng.below(256)); break;
                case 1: mutated.erase(pos, 1); break;
                default: mutated.insert(pos, 1, "{}[]\":,\n"[rng.below(8)]); break;
            }
        }
        try {
            const auto parsed = parse_instances(mutated, task);
            for (const auto& inst : parsed) validate(inst, task);
        } catch (const DataError&) {
        }
    }
}

TEST(LoadTask, ReadsFilesAndReportsMissing) {
    TempDir dir;
    const auto manifest = dir.path() / "task.json";
    const auto instances = dir.path() / "train.jsonl";
    std::ofstream(manifest) << kManifest;
    std::ofstream(instances) << R"({"id":"1","question":"q","choices":{"a":"x","b":"y","c":"z"},"gold":"b"})" << "\n";
    const auto loaded = load_task(manifest.string(), instances.string());
    EXPECT_EQ(loaded.task.task_id, "t");
    ASSERT_EQ(loaded.instances.size(), 1u);
    EXPECT_THROW(load_task((dir.path() / "missing.json").string(), instances.string()), DataError);
}

TEST(PromptSet, ValidationRules) {
    const auto task = mc_task();
    auto ps = make_prompt_set(task, 3);
    EXPECT_NO_THROW(validate(ps, task));

    auto bad = ps;
    bad.examples[0].rationale = "  ";
    EXPECT_THROW(validate(bad, task), DataError);
    bad = ps;
    bad.examples[0].rationale = "one\n\ntwo";
    EXPECT_THROW(validate(bad, task), DataError);
    bad = ps;
    bad.examples[0].label = "e";
    EXPECT_THROW(validate(bad, task), DataError);
    bad = ps;
    bad.examples.clear();
    EXPECT_THROW(validate(bad, task), DataError);
    bad = make_prompt_set(task, 33);
    EXPECT_THROW(validate(bad, task), DataError);
    EXPECT_NO_THROW(validate(make_prompt_set(task, 32), task));
}

TEST(PromptSet, ParsesFromJsonl) {
    const auto task = mc_task("t", {"a", "b"});
    const auto ps = parse_prompt_set(R"({"id":"p","question":"q","choices":{"a":"x","b":"y"},"gold":"b","rationale":"Because."})", task);
    ASSERT_EQ(ps.examples.size(), 1u);
    EXPECT_EQ(ps.examples[0].label, "b");
    EXPECT_EQ(ps.examples[0].rationale, "Because.");
    EXPECT_THROW(parse_prompt_set(R"({"id":"p","question":"q","choices":{"a":"x","b":"y"},"rationale":"r"})", task), DataError);
    EXPECT_THROW(parse_prompt_set(R"({"id":"p","question":"q","choices":{"a":"x","b":"y"},"gold":"a"})", task), DataError);
}

TEST(ShippedData, LoadsAndBuildsPrompts) {
    for (const std::string name : {"toy_mc", "toy_binary"}) {
        const std::string base = std::string(SCOTD_DATA_DIR) + "/" + name;
        const auto loaded = load_task(base + "/task.json", base + "/train.jsonl");
        const auto ps = load_prompt_set(base + "/prompts.jsonl", loaded.task);
        for (const auto& inst : loaded.instances) EXPECT_NO_THROW(build_prompt(ps, inst, loaded.task));
        const auto test = parse_instances(detail::read_file(base + "/test.jsonl"), loaded.task);
        EXPECT_FALSE(test.empty());
    }
}

}  // namespace
