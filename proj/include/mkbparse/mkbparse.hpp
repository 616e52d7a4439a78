#pragma once

#include "mkbparse/architecture.hpp"
#include "mkbparse/autodiff.hpp"
#include "mkbparse/corpus.hpp"
#include "mkbparse/dataset.hpp"
#include "mkbparse/decoding.hpp"
#include "mkbparse/error.hpp"
#include "mkbparse/executor.hpp"
#include "mkbparse/gradcheck.hpp"
#include "mkbparse/kb.hpp"
#include "mkbparse/logical_form.hpp"
#include "mkbparse/random.hpp"
#include "mkbparse/seq2seq.hpp"
#include "mkbparse/tensor.hpp"
#include "mkbparse/training.hpp"
