#pragma once

#include "scotd/aggregation.hpp"
#include "scotd/clustering.hpp"
#include "scotd/completion.hpp"
#include "scotd/config.hpp"
#include "scotd/content_store.hpp"
#include "scotd/corpus.hpp"
#include "scotd/corpus_io.hpp"
#include "scotd/cot_parser.hpp"
#include "scotd/embedder.hpp"
#include "scotd/error.hpp"
#include "scotd/eval.hpp"
#include "scotd/filters.hpp"
#include "scotd/http.hpp"
#include "scotd/task.hpp"
#include "scotd/teacher_client.hpp"
