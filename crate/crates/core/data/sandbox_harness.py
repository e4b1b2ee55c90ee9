import ast
import json
import sys


def emit(record):
    with open("results.jsonl", "a") as f:
        f.write(json.dumps(record) + "\n")
        f.flush()


def compare_parts(source):
    """Returns (left, right) expressions for `assert left == right`, else None."""
    module = ast.parse(source.strip(), mode="exec")
    if len(module.body) != 1:
        return None
    stmt = module.body[0]
    if not isinstance(stmt, ast.Assert) or not isinstance(stmt.test, ast.Compare):
        return None
    test = stmt.test
    if len(test.ops) != 1 or not isinstance(test.ops[0], ast.Eq):
        return None
    left = compile(ast.Expression(body=test.left), "<test>", "eval")
    right = compile(ast.Expression(body=test.comparators[0]), "<test>", "eval")
    return left, right


def main():
    with open("candidate.py") as f:
        source = f.read()
    with open("tests.json") as f:
        tests = json.load(f)
    namespace = {"__name__": "candidate"}
    try:
        exec(compile(source, "candidate.py", "exec"), namespace)
    except BaseException as e:
        emit({"load_error": "%s: %s" % (type(e).__name__, e)})
        return
    for index, statement in enumerate(tests):
        output = None
        try:
            parts = compare_parts(statement)
            if parts is None:
                exec(compile(statement, "<test>", "exec"), namespace)
                passed = True
            else:
                left = eval(parts[0], namespace)
                right = eval(parts[1], namespace)
                passed = bool(left == right)
                if not passed:
                    output = repr(left)
        except AssertionError:
            passed = False
        except BaseException as e:
            passed = False
            output = "%s: %s" % (type(e).__name__, e)
        emit({"index": index, "passed": passed, "output": output})


if __name__ == "__main__":
    main()
    sys.stdout.flush()
