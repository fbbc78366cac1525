#include <filesystem>
#include <set>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"
#include "pgqa/serve.hpp"

using namespace pgqa;
using namespace pgqa::serve;

namespace {

struct Rig {
  std::shared_ptr<gateway::Client> gw;
  std::unique_ptr<Service> svc;

  explicit Rig(gateway::MockScript script = testing::planted_script(), ServiceOptions opt = {}) {
    gw = std::make_shared<gateway::Client>(gateway::GatewayConfig{}, std::move(script));
    svc = std::make_unique<Service>(testing::serving_params(), gw, opt);
    svc->add_document(testing::planted_document());
  }
};

}  // namespace

TEST_CASE("sessions start empty with unique ids") {
  Rig rig;
  auto a = rig.svc->create_session("plant");
  auto b = rig.svc->create_session("plant", 300);
  CHECK(a.history.empty());
  CHECK(a.session_id != b.session_id);
  CHECK(a.budget == 8192);
  CHECK(b.budget == 300);
  CHECK(rig.svc->session(a.session_id).doc_id == "plant");
  CHECK_THROWS_AS(rig.svc->create_session("nope"), NotFoundError);
  CHECK_THROWS_AS(rig.svc->session("missing"), NotFoundError);
  CHECK_THROWS_AS(rig.svc->ask("missing", "q"), NotFoundError);
  CHECK_THROWS_AS(rig.svc->ask(a.session_id, "   "), ValidationError);
  CHECK_THROWS_AS(rig.svc->add_document(testing::planted_document()), ValidationError);
}

TEST_CASE("grounded ask retrieves and cites the planted page") {
  Rig rig;
  auto s = rig.svc->create_session("plant");
  auto t = rig.svc->ask(s.session_id, testing::kPlantedQuestion);
  CHECK(std::find(t.selected_pages.begin(), t.selected_pages.end(), testing::kPlantedPage) != t.selected_pages.end());
  CHECK(t.cited_pages == std::set<int>{testing::kPlantedPage});
  CHECK(t.answer == testing::kPlantedAnswer);
  CHECK(t.scores.size() == 20);
  // The best-scored page is the planted one.
  auto best = std::max_element(t.scores.begin(), t.scores.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  CHECK(best->first == testing::kPlantedPage);
  CHECK(rig.svc->session(s.session_id).history.size() == 1);
}

TEST_CASE("history is threaded into later prompts") {
  Rig rig;
  auto s = rig.svc->create_session("plant");
  rig.svc->ask(s.session_id, testing::kPlantedQuestion);
  rig.svc->ask(s.session_id, "And who issued it?");
  auto calls = rig.gw->recorded();
  REQUIRE(calls.size() == 2);
  const std::string first_turn = std::string("User: ") + testing::kPlantedQuestion + "\nAssistant: " +
                                 testing::kPlantedAnswer + "\n\n";
  CHECK(calls[0].prompt.find("Assistant: " + std::string(testing::kPlantedAnswer)) == std::string::npos);
  CHECK(calls[1].prompt.find(first_turn + "User: And who issued it?\nAssistant:") != std::string::npos);
  CHECK(calls[1].role == gateway::Role::qa_assistant);
  CHECK(calls[1].prompt.find("=== Page 13 ===") != std::string::npos);
}

TEST_CASE("question plus last answer retrieval mode") {
  ServiceOptions opt;
  opt.retrieval = RetrievalQuery::question_and_last_answer;
  Rig rig(testing::planted_script(), opt);
  auto s = rig.svc->create_session("plant");
  rig.svc->ask(s.session_id, testing::kPlantedQuestion);
  // The follow-up alone shares nothing with page 13; the previous answer does.
  auto t = rig.svc->ask(s.session_id, "who issued it");
  CHECK(std::find(t.selected_pages.begin(), t.selected_pages.end(), testing::kPlantedPage) != t.selected_pages.end());
}

TEST_CASE("answers without citations and out-of-range citations") {
  gateway::MockScript s;
  s.add(gateway::Role::qa_assistant, "*", "I could not find it (Page 40).");
  Rig rig(s);
  auto id = rig.svc->create_session("plant").session_id;
  auto t = rig.svc->ask(id, "anything");
  CHECK(t.cited_pages.empty());
  CHECK_FALSE(t.selected_pages.empty());
}

TEST_CASE("failed asks leave history untouched") {
  Rig rig(gateway::MockScript{});
  auto id = rig.svc->create_session("plant").session_id;
  CHECK_THROWS_AS(rig.svc->ask(id, "q"), AskError);
  CHECK(rig.svc->session(id).history.empty());
}

TEST_CASE("selected context respects the session budget") {
  Rig rig;
  auto doc = rig.svc->document("plant");
  for (std::size_t budget : {1u, 5u, 12u, 30u, 50u, 100u, 400u}) {
    auto id = rig.svc->create_session("plant", budget).session_id;
    auto t = rig.svc->ask(id, testing::kPlantedQuestion);
    std::size_t total = 0;
    for (int p : t.selected_pages) total += count_tokens(doc->page(p).text());
    if (t.truncated)
      CHECK(t.selected_pages.size() == 1);
    else
      CHECK(total <= budget);
    const auto prompt = rig.gw->recorded().back().prompt;
    for (int p = 1; p <= 20; ++p) {
      const bool shown = prompt.find("=== Page " + std::to_string(p) + " ===\n") != std::string::npos;
      CHECK(shown == (std::find(t.selected_pages.begin(), t.selected_pages.end(), p) != t.selected_pages.end()));
    }
  }
}

TEST_CASE("concurrent sessions stay isolated") {
  Rig rig;
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(rig.svc->create_session("plant").session_id);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&, i] {
      for (int k = 0; k <= i; ++k) rig.svc->ask(ids[i], "question " + std::to_string(i) + " " + std::to_string(k));
    });
  for (auto& t : threads) t.join();
  for (int i = 0; i < 8; ++i) {
    auto s = rig.svc->session(ids[i]);
    REQUIRE(s.history.size() == static_cast<std::size_t>(i + 1));
    for (int k = 0; k <= i; ++k)
      CHECK(s.history[k].question == "question " + std::to_string(i) + " " + std::to_string(k));
  }
}

TEST_CASE("sessions persist as append-only JSONL") {
  const auto dir = testing::scratch_dir("serve_persist");
  ServiceOptions opt;
  opt.persist_dir = dir.string();
  Rig rig(testing::planted_script(), opt);
  auto id = rig.svc->create_session("plant").session_id;
  rig.svc->ask(id, testing::kPlantedQuestion);
  const auto lines = io::read_jsonl_file((dir / (id + ".jsonl")).string());
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["session"]["session_id"] == id);
  CHECK(lines[1]["turn"]["cited_pages"] == io::Json::array({13}));
  // A second service over the same directory does not reuse the id.
  Rig other(testing::planted_script(), opt);
  CHECK(other.svc->create_session("plant").session_id != id);
}

TEST_CASE("history serialization") {
  Turn a;
  a.question = "q1";
  a.answer = "a1";
  CHECK(serialize_history({a, a}) == "User: q1\nAssistant: a1\n\nUser: q1\nAssistant: a1\n\n");
  CHECK(serialize_history({}).empty());
}

TEST_CASE("http api") {
  auto gw = std::make_shared<gateway::Client>(gateway::GatewayConfig{}, testing::planted_script());
  Service svc(testing::serving_params(), gw);
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::thread th([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);

  const std::string body = io::documents_to_jsonl({testing::planted_document()});
  auto up = cli.Post("/documents", body, "application/x-ndjson");
  REQUIRE(up);
  CHECK(up->status == 201);
  CHECK(io::Json::parse(up->body)[0]["pages"] == 20);
  auto dup = cli.Post("/documents", body, "application/x-ndjson");
  CHECK(dup->status == 400);
  CHECK(cli.Post("/documents", "{not json", "application/x-ndjson")->status == 400);

  auto created = cli.Post("/sessions", R"({"doc_id":"plant"})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string sid = io::Json::parse(created->body)["session_id"];
  CHECK(cli.Post("/sessions", R"({"doc_id":"nope"})", "application/json")->status == 404);

  auto asked = cli.Post("/sessions/" + sid + "/ask", io::Json{{"question", testing::kPlantedQuestion}}.dump(),
                        "application/json");
  REQUIRE(asked);
  CHECK(asked->status == 200);
  auto turn = io::Json::parse(asked->body);
  CHECK(turn["cited_pages"] == io::Json::array({13}));
  CHECK(std::find(turn["selected_pages"].begin(), turn["selected_pages"].end(), 13) != turn["selected_pages"].end());

  auto fetched = io::Json::parse(cli.Get("/sessions/" + sid)->body);
  CHECK(fetched["history"].size() == 1);
  CHECK(cli.Get("/sessions/zzz")->status == 404);
  CHECK(cli.Post("/sessions/" + sid + "/ask", R"({"q":1})", "application/json")->status == 400);

  auto page = cli.Get("/documents/plant/pages/13");
  REQUIRE(page);
  CHECK(page->status == 200);
  CHECK(io::Json::parse(page->body)["text"].get<std::string>().find("turbine warranty") != std::string::npos);
  CHECK(cli.Get("/documents/plant/pages/21")->status == 404);

  server.stop();
  th.join();
}
