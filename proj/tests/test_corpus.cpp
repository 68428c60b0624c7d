#include "support.hpp"

#include <gtest/gtest.h>

using namespace scotd;
using namespace scotd::testing;

namespace {

TEST(BuildPrompt, Structure) {
    const auto task = mc_task("t", {"a", "b", "c"});
    auto ps = make_prompt_set(task, 2);
    const auto target = make_instance(task, "x", "Where is the cat?");
    const auto prompt = build_prompt(ps, target, task);
    const std::string expected =
        "Q: demo question 0\nAnswer Choices:\n(a) choice a\n(b) choice b\n(c) choice c\nA: Demo reasoning step 0. It follows. "
        "So the answer is: (a)\n\n"
        "Q: demo question 1\nAnswer Choices:\n(a) choice a\n(b) choice b\n(c) choice c\nA: Demo reasoning step 1. It follows. "
        "So the answer is: (b)\n\n"
        "Q: Where is the cat?\nAnswer Choices:\n(a) choice a\n(b) choice b\n(c) choice c\nA:";
    EXPECT_EQ(prompt, expected);
}

TEST(BuildPrompt, DemonstrationsParseBackToTheirLabels) {
    const auto task = mc_task();
    const auto ps = make_prompt_set(task, 5);
    const auto prompt = build_prompt(ps, make_instance(task, "x", "q"), task);
    std::size_t pos = 0, block = 0;
    while (block < ps.examples.size()) {
        const auto end = prompt.find("\n\n", pos);
        const auto text = prompt.substr(pos, end - pos);
        const auto a = text.find("\nA: ");
        const auto parsed = parse_cot(text.substr(a + 4), task);
        EXPECT_EQ(parsed.predicted_label, ps.examples[block].label);
        EXPECT_EQ(parsed.rationale_text, ps.examples[block].rationale);
        pos = end + 2;
        ++block;
    }
}

TEST(BuildPrompt, BinaryTasksShowLowercaseDisplayKeys) {
    const auto task = binary_task("quarel", {"a", "b"});
    Instance inst;
    inst.instance_id = "s1";
    inst.task_id = "quarel";
    inst.question = "Steve is waiting at the gym. Which surface is rougher?";
    inst.choices = {{"a", "carpet"}, {"b", "ice rink"}};
    const auto block = render_question_block(inst, task);
    EXPECT_NE(block.find("(a) carpet\n(b) ice rink\nA:"), std::string::npos);
    EXPECT_EQ(parse_cot("So the carpet is rougher. So the answer is: (A)", task).predicted_label, "a");

    const auto named = binary_task("yn", {"yes", "no"});
    Instance yn = make_instance(named, "y", "Is it?");
    EXPECT_NE(render_question_block(yn, named).find("(a) choice yes\n(b) choice no\n"), std::string::npos);
}

TEST(BuildPrompt, SeparatorCollisionsAreRejected) {
    const auto task = mc_task("t", {"a", "b"});
    const auto ps = make_prompt_set(task, 1);
    auto target = make_instance(task, "x", "one\n\nQ: two");
    EXPECT_THROW(build_prompt(ps, target, task), InvalidArgument);
    target = make_instance(task, "x", "one\nAnswer Choices: two");
    EXPECT_THROW(build_prompt(ps, target, task), InvalidArgument);
    target = make_instance(task, "x", "fine\nmultiline question");
    target.choices["a"] = "bad\nchoice";
    EXPECT_THROW(build_prompt(ps, target, task), InvalidArgument);
    target = make_instance(task, "x", "fine\nmultiline question");
    EXPECT_NO_THROW(build_prompt(ps, target, task));
}

TEST(BuildPrompt, LabelOnlyDemonstrations) {
    const auto task = mc_task("t", {"a", "b"});
    const auto prompt = build_label_only_prompt(make_prompt_set(task, 2), make_instance(task, "x", "q"), task);
    EXPECT_NE(prompt.find("A: (a)\n\nQ: demo question 1"), std::string::npos);
    EXPECT_EQ(prompt.find("Demo reasoning"), std::string::npos);
}

TEST(PromptSetFingerprint, ChangesWithContent) {
    const auto task = mc_task();
    auto ps = make_prompt_set(task, 3);
    const auto fp = prompt_set_fingerprint(ps, task);
    EXPECT_EQ(fp, prompt_set_fingerprint(make_prompt_set(task, 3), task));
    ps.examples[1].rationale += " More.";
    EXPECT_NE(fp, prompt_set_fingerprint(ps, task));
}

struct SampledFixture {
    TaskSpec task = mc_task("t", {"a", "b", "c", "d"});
    std::vector<Instance> instances = make_instances(task, 12, 1);
    PromptSet ps = make_prompt_set(task, 3);
    std::shared_ptr<ScriptedTransport> transport;
    std::shared_ptr<ContentStore> cache = std::make_shared<ContentStore>();

    explicit SampledFixture(double accuracy = 0.7) { transport = std::make_shared<ScriptedTransport>(gold_model(task, instances, accuracy)); }

    DistillationCorpus sample(int n, std::size_t concurrency = 4) {
        TeacherClient client(transport, cache);
        SamplingOptions opts;
        opts.model_id = "teacher";
        opts.n_samples = n;
        opts.concurrency = concurrency;
        return sample_corpus(task, instances, ps, opts, client);
    }
};

TEST(SampleCorpus, ShapeAndProvenance) {
    SampledFixture f;
    const auto corpus = f.sample(7);
    EXPECT_EQ(corpus.entries.size(), 12u);
    EXPECT_EQ(corpus.sample_count(), 84u);
    EXPECT_NO_THROW(validate(corpus, f.instances));
    for (const auto& [id, samples] : corpus.entries) {
        for (std::size_t k = 0; k < samples.size(); ++k) {
            EXPECT_EQ(samples[k].sample_index, static_cast<int>(k));
            EXPECT_EQ(samples[k].instance_id, id);
            EXPECT_TRUE(samples[k].parsed.ok());
            EXPECT_TRUE(samples[k].mean_logprob);
        }
    }
    ASSERT_EQ(corpus.provenance.size(), 1u);
    EXPECT_EQ(corpus.provenance[0].kind, "sample");
    EXPECT_EQ(corpus.provenance[0].budget, 7);
    EXPECT_EQ(corpus.prompt_set_fingerprint, prompt_set_fingerprint(f.ps, f.task));
    EXPECT_EQ(f.transport->calls(), 12u);
}

TEST(SampleCorpus, RerunIsIdenticalAndFree) {
    SampledFixture f;
    const auto a = f.sample(5, 1);
    const auto b = f.sample(5, 8);
    EXPECT_EQ(a, b);
    EXPECT_EQ(f.transport->calls(), 12u);
}

TEST(SampleCorpus, MockLabelIsRecovered) {
    SampledFixture f(1.0);
    const auto corpus = f.sample(3);
    for (const auto& inst : f.instances) {
        for (const auto& s : corpus.entries.at(inst.instance_id)) EXPECT_EQ(s.parsed.predicted_label, inst.gold_label);
    }
}

TEST(SampleCorpus, ErrorsNameTheInstance) {
    SampledFixture f;
    f.transport->script({400});
    try {
        f.sample(2, 1);
        FAIL();
    } catch (const UpstreamError& e) {
        EXPECT_NE(std::string(e.what()).find("instance 'i00000'"), std::string::npos) << e.what();
    }
}

TEST(Restrict, FirstSamplesAndInstances) {
    SampledFixture f;
    const auto corpus = f.sample(6);
    const auto first = restrict_to_first_samples(corpus, 2);
    EXPECT_EQ(first.sample_count(), 24u);
    EXPECT_EQ(first.provenance.back().kind, "first_k");
    const std::vector<Instance> keep(f.instances.begin(), f.instances.begin() + 3);
    const auto sub = restrict_to_instances(corpus, keep);
    EXPECT_EQ(sub.entries.size(), 3u);
}

TEST(TrainingExamples, Counts) {
    SampledFixture f(0.5);
    const auto corpus = f.sample(4);
    const auto scotd = to_training_examples(corpus, f.instances, f.task, TrainingMode::scotd, Setting::supervised);
    EXPECT_EQ(scotd.size(), corpus.sample_count());
    const auto label_only = to_training_examples(corpus, f.instances, f.task, TrainingMode::label_only, Setting::supervised);
    EXPECT_EQ(label_only.size(), f.instances.size());
    for (const auto& ex : label_only) {
        EXPECT_EQ(parse_cot(ex.completion, f.task).predicted_label,
                  std::find_if(f.instances.begin(), f.instances.end(), [&](const auto& i) { return i.instance_id == ex.instance_id; })
                      ->gold_label);
    }
    const auto few = to_training_examples(corpus, f.instances, f.task, TrainingMode::label_only, Setting::few_shot);
    EXPECT_EQ(few.size(), corpus.sample_count());
}

TEST(TrainingExamples, PromptIsZeroShotAndCompletionParses) {
    SampledFixture f;
    const auto corpus = f.sample(2);
    const auto ex = to_training_examples(corpus, f.instances, f.task, TrainingMode::scotd, Setting::supervised);
    for (const auto& e : ex) {
        EXPECT_EQ(e.prompt.find("Demo reasoning"), std::string::npos);
        EXPECT_EQ(e.prompt.substr(0, 3), "Q: ");
        EXPECT_TRUE(parse_cot(e.completion, f.task).ok());
        EXPECT_EQ(e.provenance.at("mode"), "scotd");
    }
}

TEST(TrainingExamples, SkipsUnparseableAndNeedsGoldWhenSupervised) {
    const auto task = mc_task("t", {"a", "b"});
    auto inst = make_instance(task, "x", "q", "a");
    DistillationCorpus c;
    c.task_id = "t";
    c.entries["x"] = {vote_sample(task, "a", -1.0, 0), vote_sample(task, std::nullopt, -1.0, 1)};
    for (auto& s : c.entries["x"]) s.instance_id = "x";
    EXPECT_EQ(to_training_examples(c, {inst}, task, TrainingMode::scotd, Setting::supervised).size(), 1u);
    inst.gold_label.reset();
    EXPECT_THROW(to_training_examples(c, {inst}, task, TrainingMode::scotd, Setting::supervised), InvalidArgument);
    EXPECT_EQ(to_training_examples(c, {inst}, task, TrainingMode::scotd, Setting::few_shot).size(), 1u);
    EXPECT_THROW(to_training_examples(c, {inst}, task, TrainingMode::greedy_cot, Setting::few_shot), InvalidArgument);
}

TEST(TrainingExamples, GreedyCotNeedsOneZeroTemperatureSample) {
    const auto task = mc_task("t", {"a", "b"});
    const auto inst = make_instance(task, "x", "q", "a");
    DistillationCorpus c;
    c.task_id = "t";
    auto s = vote_sample(task, "a", -1.0, 0);
    s.instance_id = "x";
    s.teacher.temperature = 0.0;
    c.entries["x"] = {s};
    EXPECT_EQ(to_training_examples(c, {inst}, task, TrainingMode::greedy_cot, Setting::supervised).size(), 1u);
}

}  // namespace
