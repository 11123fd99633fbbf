"""Red-black tree ordered map (CLRS-style, with a shared nil sentinel)."""

from __future__ import annotations

from typing import Any, Generic, Iterator, TypeVar

K = TypeVar("K")
V = TypeVar("V")

RED, BLACK = True, False


class _Node:
    __slots__ = ("key", "value", "color", "left", "right", "parent")

    def __init__(self, key, value, color, nil):
        self.key = key
        self.value = value
        self.color = color
        self.left = nil
        self.right = nil
        self.parent = nil


class RBTree(Generic[K, V]):
    def __init__(self) -> None:
        nil = _Node(None, None, BLACK, None)
        nil.left = nil.right = nil.parent = nil
        self._nil = nil
        self._root = nil
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def __contains__(self, key: K) -> bool:
        return self._find(key) is not self._nil

    def _find(self, key: K) -> _Node:
        x = self._root
        while x is not self._nil:
            if key == x.key:
                return x
            x = x.left if key < x.key else x.right
        return x

    def get(self, key: K, default: Any = None) -> V | Any:
        n = self._find(key)
        return default if n is self._nil else n.value

    def __getitem__(self, key: K) -> V:
        n = self._find(key)
        if n is self._nil:
            raise KeyError(key)
        return n.value

    # ---------------------------------------------------------------- rotations

    def _rotate_left(self, x: _Node) -> None:
        y = x.right
        x.right = y.left
        if y.left is not self._nil:
            y.left.parent = x
        y.parent = x.parent
        if x.parent is self._nil:
            self._root = y
        elif x is x.parent.left:
            x.parent.left = y
        else:
            x.parent.right = y
        y.left = x
        x.parent = y

    def _rotate_right(self, x: _Node) -> None:
        y = x.left
        x.left = y.right
        if y.right is not self._nil:
            y.right.parent = x
        y.parent = x.parent
        if x.parent is self._nil:
            self._root = y
        elif x is x.parent.right:
            x.parent.right = y
        else:
            x.parent.left = y
        y.right = x
        x.parent = y

    # ------------------------------------------------------------------- insert

    def insert(self, key: K, value: V) -> None:
        """Insert or replace."""
        y = self._nil
        x = self._root
        while x is not self._nil:
            y = x
            if key == x.key:
                x.value = value
                return
            x = x.left if key < x.key else x.right
        z = _Node(key, value, RED, self._nil)
        z.parent = y
        if y is self._nil:
            self._root = z
        elif key < y.key:
            y.left = z
        else:
            y.right = z
        self._size += 1
        self._insert_fixup(z)

    __setitem__ = insert

    def _insert_fixup(self, z: _Node) -> None:
        while z.parent.color is RED:
            gp = z.parent.parent
            if z.parent is gp.left:
                y = gp.right
                if y.color is RED:
                    z.parent.color = BLACK
                    y.color = BLACK
                    gp.color = RED
                    z = gp
                else:
                    if z is z.parent.right:
                        z = z.parent
                        self._rotate_left(z)
                    z.parent.color = BLACK
                    z.parent.parent.color = RED
                    self._rotate_right(z.parent.parent)
            else:
                y = gp.left
                if y.color is RED:
                    z.parent.color = BLACK
                    y.color = BLACK
                    gp.color = RED
                    z = gp
                else:
                    if z is z.parent.left:
                        z = z.parent
                        self._rotate_right(z)
                    z.parent.color = BLACK
                    z.parent.parent.color = RED
                    self._rotate_left(z.parent.parent)
        self._root.color = BLACK

    # ------------------------------------------------------------------- delete

    def _transplant(self, u: _Node, v: _Node) -> None:
        if u.parent is self._nil:
            self._root = v
        elif u is u.parent.left:
            u.parent.left = v
        else:
            u.parent.right = v
        v.parent = u.parent

    def _min_node(self, x: _Node) -> _Node:
        while x.left is not self._nil:
            x = x.left
        return x

    def _max_node(self, x: _Node) -> _Node:
        while x.right is not self._nil:
            x = x.right
        return x

    def delete(self, key: K) -> V:
        z = self._find(key)
        if z is self._nil:
            raise KeyError(key)
        value = z.value
        y = z
        y_color = y.color
        if z.left is self._nil:
            x = z.right
            self._transplant(z, z.right)
        elif z.right is self._nil:
            x = z.left
            self._transplant(z, z.left)
        else:
            y = self._min_node(z.right)
            y_color = y.color
            x = y.right
            if y.parent is z:
                x.parent = y
            else:
                self._transplant(y, y.right)
                y.right = z.right
                y.right.parent = y
            self._transplant(z, y)
            y.left = z.left
            y.left.parent = y
            y.color = z.color
        if y_color is BLACK:
            self._delete_fixup(x)
        self._size -= 1
        self._nil.parent = self._nil
        return value

    __delitem__ = delete

    def pop(self, key: K, *default: Any) -> V | Any:
        if key not in self and default:
            return default[0]
        return self.delete(key)

    def _delete_fixup(self, x: _Node) -> None:
        while x is not self._root and x.color is BLACK:
            if x is x.parent.left:
                w = x.parent.right
                if w.color is RED:
                    w.color = BLACK
                    x.parent.color = RED
                    self._rotate_left(x.parent)
                    w = x.parent.right
                if w.left.color is BLACK and w.right.color is BLACK:
                    w.color = RED
                    x = x.parent
                else:
                    if w.right.color is BLACK:
                        w.left.color = BLACK
                        w.color = RED
                        self._rotate_right(w)
                        w = x.parent.right
                    w.color = x.parent.color
                    x.parent.color = BLACK
                    w.right.color = BLACK
                    self._rotate_left(x.parent)
                    x = self._root
            else:
                w = x.parent.left
                if w.color is RED:
                    w.color = BLACK
                    x.parent.color = RED
                    self._rotate_right(x.parent)
                    w = x.parent.left
                if w.right.color is BLACK and w.left.color is BLACK:
                    w.color = RED
                    x = x.parent
                else:
                    if w.left.color is BLACK:
                        w.right.color = BLACK
                        w.color = RED
                        self._rotate_left(w)
                        w = x.parent.left
                    w.color = x.parent.color
                    x.parent.color = BLACK
                    w.left.color = BLACK
                    self._rotate_right(x.parent)
                    x = self._root
        x.color = BLACK

    # ---------------------------------------------------------------- traversal

    def min_item(self) -> tuple[K, V]:
        if self._root is self._nil:
            raise KeyError("empty tree")
        n = self._min_node(self._root)
        return n.key, n.value

    def max_item(self) -> tuple[K, V]:
        if self._root is self._nil:
            raise KeyError("empty tree")
        n = self._max_node(self._root)
        return n.key, n.value

    def items(self) -> Iterator[tuple[K, V]]:
        stack: list[_Node] = []
        x = self._root
        while stack or x is not self._nil:
            while x is not self._nil:
                stack.append(x)
                x = x.left
            x = stack.pop()
            yield x.key, x.value
            x = x.right

    def keys(self) -> Iterator[K]:
        return (k for k, _ in self.items())

    def values(self) -> Iterator[V]:
        return (v for _, v in self.items())

    __iter__ = keys

    def check(self) -> int:
        """Verify the red-black properties; returns the black height."""
        nil = self._nil
        if self._root.color is not BLACK:
            raise AssertionError("root is red")

        def walk(n: _Node, lo, hi) -> int:
            if n is nil:
                return 1
            if (lo is not None and not lo < n.key) or (hi is not None and not n.key < hi):
                raise AssertionError("ordering violated")
            if n.color is RED and (n.left.color is RED or n.right.color is RED):
                raise AssertionError("red node with red child")
            if n.left is not nil and n.left.parent is not n or n.right is not nil and n.right.parent is not n:
                raise AssertionError("broken parent link")
            lh = walk(n.left, lo, n.key)
            rh = walk(n.right, n.key, hi)
            if lh != rh:
                raise AssertionError("black heights differ")
            return lh + (n.color is BLACK)

        count = sum(1 for _ in self.items())
        if count != self._size:
            raise AssertionError("size mismatch")
        return walk(self._root, None, None)
