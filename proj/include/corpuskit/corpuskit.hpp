#pragma once

#include "corpuskit/corpus_io.hpp"
#include "corpuskit/dedup.hpp"
#include "corpuskit/pipeline_config.hpp"
#include "corpuskit/run_controller.hpp"
#include "corpuskit/shardstore.hpp"
#include "corpuskit/stats_report.hpp"
#include "corpuskit/tokenizer.hpp"
