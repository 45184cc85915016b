#!/usr/bin/env node
// Interactive SMT-LIB2 evaluator over stdin/stdout, backed by the z3
// WebAssembly build from the `z3-solver` npm package. Behaves like `z3 -in`
// for the command subset used here: declare-const, assert, check-sat,
// get-value, push, pop, set-logic, set-option, echo, exit.
//
// If `z3-solver` is not resolvable locally, the global npm root is tried.

"use strict";

function requireZ3() {
  try {
    return require("z3-solver");
  } catch (e) {
    const { execSync } = require("child_process");
    let root;
    try {
      root = execSync("npm root -g", { encoding: "utf8" }).trim();
    } catch (e2) {
      process.stderr.write("z3cli: cannot locate z3-solver (npm root -g failed)\n");
      process.exit(3);
    }
    module.paths.push(root);
    try {
      return require("z3-solver");
    } catch (e3) {
      process.stderr.write(
        "z3cli: z3-solver not installed; run `npm install -g z3-solver`\n");
      process.exit(3);
    }
  }
}

// Split a stream chunk into complete top-level s-expressions. Handles
// comments, string literals and |quoted symbols| so parens inside them do
// not confuse the depth counter.
class FormSplitter {
  constructor() {
    this.buf = "";
    this.depth = 0;
    this.inString = false;
    this.inQuoted = false;
    this.inComment = false;
    this.start = 0;
    this.pos = 0;
  }

  push(chunk) {
    this.buf += chunk;
    const forms = [];
    while (this.pos < this.buf.length) {
      const c = this.buf[this.pos];
      if (this.inComment) {
        if (c === "\n") this.inComment = false;
      } else if (this.inString) {
        if (c === '"') this.inString = false;
      } else if (this.inQuoted) {
        if (c === "|") this.inQuoted = false;
      } else if (c === ";") {
        this.inComment = true;
      } else if (c === '"') {
        this.inString = true;
      } else if (c === "|") {
        this.inQuoted = true;
      } else if (c === "(") {
        this.depth += 1;
      } else if (c === ")") {
        this.depth -= 1;
        if (this.depth === 0) {
          forms.push(this.buf.slice(this.start, this.pos + 1));
          this.start = this.pos + 1;
        }
        if (this.depth < 0) {
          process.stderr.write("z3cli: unbalanced ')'\n");
          process.exit(3);
        }
      }
      this.pos += 1;
    }
    if (this.start > 0) {
      this.buf = this.buf.slice(this.start);
      this.pos -= this.start;
      this.start = 0;
    }
    return forms;
  }
}

async function main() {
  const { init } = requireZ3();
  const { Z3 } = await init();
  const cfg = Z3.mk_config();
  const ctx = Z3.mk_context(cfg);

  const splitter = new FormSplitter();
  let chain = Promise.resolve();
  let closed = false;

  const evalForm = async (form) => {
    if (/^\(\s*exit\s*\)$/.test(form.trim())) {
      closed = true;
      process.stdout.write("", () => process.exit(0));
      setTimeout(() => process.exit(0), 50);
      return;
    }
    try {
      const out = await Z3.eval_smtlib2_string(ctx, form);
      if (out && out.length > 0) process.stdout.write(out);
    } catch (e) {
      process.stdout.write(`(error "z3cli: ${String(e).replace(/"/g, "'")}")\n`);
    }
  };

  process.stdin.setEncoding("utf8");
  process.stdin.on("data", (chunk) => {
    if (closed) return;
    for (const form of splitter.push(chunk)) {
      chain = chain.then(() => evalForm(form));
    }
  });
  process.stdin.on("end", () => {
    chain = chain.then(() => process.exit(0));
  });
}

main().catch((e) => {
  process.stderr.write(`z3cli: fatal: ${String(e)}\n`);
  process.exit(3);
});
