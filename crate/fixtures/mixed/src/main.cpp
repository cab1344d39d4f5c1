class Base {
public:
  int x;
  virtual void base_fn() { x = 1; }
};
class V {
public:
  int v;
  virtual void v_fn() { v = 2; }
};
class M : public Base, public virtual V {
public:
  int m;
  virtual void m_fn() { m = 3; }
};
class N : public M {
public:
  int n;
  virtual void n_fn() { n = 4; }
};

int main() {
  Base b; V v; M m; N n;
  b.base_fn(); v.v_fn(); m.m_fn(); n.n_fn();
  return 0;
}
